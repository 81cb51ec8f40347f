import json
import tempfile
from collections import Counter
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from expressions.choices import Ethnicity, WindowMode
from expressions.dataio import (
    AugmentConfig, LengthPolicy, assign_folds, augment, load_dataset, mixed_ratio_epoch, normalize_length,
    save_dataset, split_synthetic_by_identity,
)
from expressions.exceptions import ChecksumError, DimensionMismatchError, ManifestError
from expressions.sequences import N_CHANNELS
from expressions.signalgen import (
    NoiseConfig, angle_grid, canonical_signals, generate_identity_suite, generate_surrogate_real,
    generate_synthetic_dataset,
)
from expressions.tests.utils import make_sequence

REAL_NOISE = NoiseConfig(additive_sigma=0.05, jitter_frames=2, drift_amplitude=0.05, occlusion_prob=0.05)


class LengthPolicyTests(SimpleTestCase):

    def frames(self, length):
        values = np.tile(np.arange(length, dtype=np.float32)[:, None] / 100, (1, N_CHANNELS))
        return make_sequence(values)

    def test_short_sequences_loop_from_the_start(self):
        out = normalize_length(self.frames(3), LengthPolicy(7))
        assert_array_equal(np.round(out.values[:, 0] * 100), [0, 1, 2, 0, 1, 2, 0])

    def test_centre_window(self):
        out = normalize_length(self.frames(10), LengthPolicy(4, WindowMode.TEST_CENTER))
        assert_array_equal(np.round(out.values[:, 0] * 100), [3, 4, 5, 6])

    def test_exact_length_unchanged(self):
        seq = self.frames(6)
        self.assertIs(normalize_length(seq, LengthPolicy(6)), seq)

    def test_random_windows_are_contiguous_and_in_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n_frames = int(rng.integers(1, 80))
            target = int(rng.integers(1, 80))
            seq = self.frames(n_frames)
            out = normalize_length(seq, LengthPolicy(target, WindowMode.TRAIN_RANDOM), rng)
            self.assertEqual(out.length, target)
            starts = np.round(out.values[:, 0] * 100).astype(int)
            if n_frames >= target:
                self.assertTrue(0 <= starts[0] <= n_frames - target)
                assert_array_equal(np.diff(starts), 1)
            else:
                assert_array_equal(starts, np.arange(target) % n_frames)

    def test_centre_window_never_uses_rng(self):
        seq = self.frames(40)
        policy = LengthPolicy(25)
        assert_array_equal(normalize_length(seq, policy).values, normalize_length(seq, policy).values)


class AugmentTests(SimpleTestCase):

    def test_neutral_config_is_identity(self):
        seq = make_sequence(length=12)
        out = augment(seq, AugmentConfig(), np.random.default_rng(0))
        assert_array_equal(out.values, seq.values)

    def test_output_stays_in_unit_interval(self):
        cfg = AugmentConfig((0.85, 1.15), 0.05, 2, 0.2)
        rng = np.random.default_rng(1)
        for _ in range(20):
            out = augment(make_sequence(length=12), cfg, rng)
            self.assertGreaterEqual(out.values.min(), 0.0)
            self.assertLessEqual(out.values.max(), 1.0)

    def test_fixed_scale_multiplies_every_value(self):
        seq = make_sequence(length=12)
        out = augment(seq, AugmentConfig((0.9, 0.9)), np.random.default_rng(0))
        assert_allclose(out.values, seq.values.astype(np.float64) * 0.9, rtol=1e-6)

    def test_same_seed_same_augmentation(self):
        cfg = AugmentConfig((0.85, 1.15), 0.05, 2, 0.2)
        seq = make_sequence(length=12)
        first = augment(seq, cfg, np.random.default_rng(7))
        assert_array_equal(first.values, augment(seq, cfg, np.random.default_rng(7)).values)
        self.assertFalse(np.array_equal(first.values, augment(seq, cfg, np.random.default_rng(8)).values))



class FoldAssignmentTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.real = assign_folds(generate_surrogate_real(0, REAL_NOISE, 0), 5, rng=np.random.default_rng(0))

    def test_partition_sizes(self):
        self.assertEqual(sorted(Counter(self.real.fold_of).values()), [24, 24, 25, 25, 25])
        self.assertEqual(self.real.n_folds, 5)

    def test_minority_fold(self):
        fold = self.real.fold(0)
        self.assertEqual(len(fold), 25)
        self.assertTrue(all(s.ethnicity != Ethnicity.CAUCASIAN for s in fold))
        self.assertEqual(self.real.manifest['minority_fold'],
                         {'non_caucasian_total': 26, 'non_caucasian_in_fold_0': 25})

    def test_labels_spread_over_folds(self):
        for f in range(5):
            counts = Counter(s.label for s in self.real.fold(f))
            self.assertLessEqual(max(counts.values()) - min(counts.values()), 2)

    def test_without_minority_fold(self):
        plain = assign_folds(self.real, 5, minority_fold=False, rng=np.random.default_rng(0))
        self.assertEqual(sorted(Counter(plain.fold_of).values()), [24, 24, 25, 25, 25])


class SyntheticSplitTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.synth = generate_synthetic_dataset(generate_identity_suite(0), canonical_signals(), angle_grid(),
                                               NoiseConfig(additive_sigma=0.02, jitter_frames=1), seed=0)

    def test_identity_disjoint_split(self):
        train, val = split_synthetic_by_identity(self.synth, 5, np.random.default_rng(0))
        self.assertEqual((len(train), len(val)), (3591, 945))
        self.assertFalse(set(train.identity_ids()) & set(val.identity_ids()))

    def test_empty_validation_split(self):
        train, val = split_synthetic_by_identity(self.synth, 0, np.random.default_rng(0))
        self.assertEqual((len(train), len(val)), (4536, 0))

    def test_mixed_ratio_epoch_size(self):
        real_train = [make_sequence(sequence_id=f'r{i}') for i in range(98)]
        rng = np.random.default_rng(0)
        for _ in range(3):
            epoch = mixed_ratio_epoch(real_train, self.synth, 0.25, rng)
            self.assertEqual(len(epoch), 98 + 126)
            synthetic = [s for s in epoch if s.sequence_id.startswith('syn-')]
            self.assertEqual(len({(s.identity_id, s.signal_id) for s in synthetic}), 126)

    def test_mixed_ratio_epoch_redraws_identities_and_angles(self):
        real_train = [make_sequence(sequence_id=f'r{i}') for i in range(98)]
        rng = np.random.default_rng(1)
        identity_sets = []
        for _ in range(3):
            epoch = mixed_ratio_epoch(real_train, self.synth, 0.25, rng)
            identity_sets.append(frozenset(s.identity_id for s in epoch if s.sequence_id.startswith('syn-')))
        self.assertTrue(all(len(ids) == 6 for ids in identity_sets))
        self.assertGreater(len(set(identity_sets)), 1)

        first, second = (
            {(s.identity_id, s.signal_id): s.angle for s in mixed_ratio_epoch(real_train, self.synth, 1.0, rng)
             if s.sequence_id.startswith('syn-')}
            for _ in range(2)
        )
        self.assertEqual(first.keys(), second.keys())
        self.assertGreater(sum(first[key] != second[key] for key in first), len(first) // 2)



class DatasetFileTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / 'real'
        self.dataset = assign_folds(generate_surrogate_real(0, REAL_NOISE, 0), 5, rng=np.random.default_rng(0))
        save_dataset(self.dataset, self.path)

    def test_round_trip_is_bit_exact(self):
        loaded = load_dataset(self.path)
        self.assertEqual(len(loaded), len(self.dataset))
        self.assertEqual(loaded.fold_of, self.dataset.fold_of)
        for a, b in zip(self.dataset, loaded):
            assert_array_equal(a.values, b.values)
            self.assertEqual((a.sequence_id, a.label, a.ethnicity, a.angle), (b.sequence_id, b.label, b.ethnicity, b.angle))

    def test_truncated_data_file(self):
        data = self.path / 'sequences.bin'
        data.write_bytes(data.read_bytes()[:-4])
        with self.assertRaises(ChecksumError):
            load_dataset(self.path)

    def test_flipped_byte(self):
        data = self.path / 'sequences.bin'
        payload = bytearray(data.read_bytes())
        payload[100] ^= 0xFF
        data.write_bytes(bytes(payload))
        with self.assertRaises(ChecksumError):
            load_dataset(self.path)

    def rewrite_manifest(self, change):
        manifest_path = self.path / 'manifest.json'
        manifest = json.loads(manifest_path.read_text())
        change(manifest)
        manifest_path.write_text(json.dumps(manifest))

    def test_channel_layout_mismatch(self):
        self.rewrite_manifest(lambda m: m.update(channels=m['channels'][:-1]))
        with self.assertRaises(DimensionMismatchError):
            load_dataset(self.path)

    def test_unsupported_schema(self):
        self.rewrite_manifest(lambda m: m.update(schema_version=99))
        with self.assertRaises(ManifestError):
            load_dataset(self.path)

    def test_missing_manifest(self):
        (self.path / 'manifest.json').unlink()
        with self.assertRaises(ManifestError):
            load_dataset(self.path)
