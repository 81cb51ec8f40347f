"""Length normalization, augmentation, fold assignment, sampling and dataset files."""
import json
import logging
import math
import zlib
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError

from .choices import EmotionLabel, Ethnicity, Provenance, WindowMode
from .exceptions import ChecksumError, DimensionMismatchError, ManifestError
from .sequences import AU_CODES, N_CHANNELS, LabeledSequence, SequenceDataset, ViewingAngle

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MANIFEST_NAME = 'manifest.json'
DATA_NAME = 'sequences.bin'
_DTYPE = np.dtype('<f4')


@dataclass(frozen=True)
class LengthPolicy:
    length: int = 64
    mode: WindowMode = WindowMode.TEST_CENTER

    def __post_init__(self):
        if self.length < 1:
            raise ValidationError('Target length must be at least 1 frame')
        object.__setattr__(self, 'mode', WindowMode(self.mode))

    def for_mode(self, mode):
        return LengthPolicy(self.length, mode)


def normalize_length(seq, policy, rng=None):
    """Cut or loop ``seq`` to exactly ``policy.length`` frames.

    Short clips repeat cyclically from frame 0. Long clips yield a random
    window in training mode and the centre window otherwise.
    """
    n_frames, target = seq.length, policy.length
    if n_frames < target:
        return seq.with_values(seq.values[np.arange(target) % n_frames])
    if policy.mode == WindowMode.TRAIN_RANDOM:
        start = int(rng.integers(0, n_frames - target + 1))
    else:
        start = (n_frames - target) // 2
    if start == 0 and n_frames == target:
        return seq
    return seq.with_values(seq.values[start:start + target])


@dataclass(frozen=True)
class AugmentConfig:
    amplitude_scale_range: tuple = (1.0, 1.0)
    noise_sigma: float = 0.0
    max_time_shift: int = 0
    channel_dropout_prob: float = 0.0

    def __post_init__(self):
        lo, hi = self.amplitude_scale_range
        object.__setattr__(self, 'amplitude_scale_range', (float(lo), float(hi)))
        if lo > hi:
            raise ValidationError('amplitude_scale_range must satisfy lo <= hi')
        if min(lo, self.noise_sigma, self.max_time_shift, self.channel_dropout_prob) < 0:
            raise ValidationError('Augmentation magnitudes must be non-negative')
        if self.channel_dropout_prob > 1:
            raise ValidationError('channel_dropout_prob must lie in [0, 1]')

    @classmethod
    def from_dict(cls, data):
        return cls(
            amplitude_scale_range=tuple(data.get('amplitude_scale_range', (1.0, 1.0))),
            noise_sigma=float(data.get('noise_sigma', 0.0)),
            max_time_shift=int(data.get('max_time_shift', 0)),
            channel_dropout_prob=float(data.get('channel_dropout_prob', 0.0)),
        )

    def to_dict(self):
        data = asdict(self)
        data['amplitude_scale_range'] = list(self.amplitude_scale_range)
        return data


def augment(seq, cfg, rng):
    """One draw of (scale, shift, dropout mask) applied to every frame alike."""
    lo, hi = cfg.amplitude_scale_range
    values = seq.values.astype(np.float64)
    if (lo, hi) != (1.0, 1.0):
        values = values * (lo if lo == hi else rng.uniform(lo, hi))
    if cfg.noise_sigma > 0:
        values = values + rng.normal(0.0, cfg.noise_sigma, size=values.shape)
    if cfg.max_time_shift > 0:
        values = np.roll(values, int(rng.integers(-cfg.max_time_shift, cfg.max_time_shift + 1)), axis=0)
    if cfg.channel_dropout_prob > 0:
        values = values * (rng.random(N_CHANNELS) >= cfg.channel_dropout_prob)
    return seq.with_values(np.clip(values, 0.0, 1.0))


def _fold_sizes(n, k):
    return [n // k + (1 if i < n % k else 0) for i in range(k)]


def _deal(indices, labels, capacities, fold_of, folds, rng):
    """Round-robin label-grouped indices into folds with spare capacity."""
    by_label = defaultdict(list)
    for i in indices:
        by_label[labels[i]].append(i)
    queue = []
    for label in sorted(by_label):
        members = by_label[label]
        queue.extend(members[j] for j in rng.permutation(len(members)))
    cursor = 0
    for i in queue:
        while capacities[folds[cursor % len(folds)]] == 0:
            cursor += 1
        fold = folds[cursor % len(folds)]
        fold_of[i] = fold
        capacities[fold] -= 1
        cursor += 1


def assign_folds(dataset, k=5, minority_fold=True, rng=None):
    """Partition a surrogate-real dataset into ``k`` label-stratified folds.

    With ``minority_fold`` set, fold 0 is filled with non-Caucasian sequences
    first. If there are more of them than fold 0 holds, the surplus (dropped
    from the best-represented labels) joins the general pool.
    """
    n = len(dataset)
    if k < 2:
        raise ValidationError('Cross-validation needs at least 2 folds')
    if k > n:
        raise ValidationError('Cannot split %(n)d sequences into %(k)d folds', params={'n': n, 'k': k})
    if any(s.provenance != Provenance.SURROGATE_REAL for s in dataset):
        raise ValidationError('Folds are assigned on the surrogate-real dataset only')
    rng = rng if rng is not None else np.random.default_rng(0)

    labels = [int(s.label) for s in dataset]
    capacities = dict(enumerate(_fold_sizes(n, k)))
    fold_of = [None] * n
    remaining = list(range(n))
    minority_info = None

    if minority_fold:
        minority = [i for i, s in enumerate(dataset) if s.ethnicity != Ethnicity.CAUCASIAN]
        slots = capacities[0]
        chosen = _stratified_pick(minority, labels, min(slots, len(minority)), rng)
        if len(chosen) < slots:
            minority_set = set(minority)
            majority = [i for i in range(n) if i not in minority_set]
            chosen += _stratified_pick(majority, labels, slots - len(chosen), rng, already=chosen)
        for i in chosen:
            fold_of[i] = 0
        capacities[0] = 0
        picked = set(chosen)
        remaining = [i for i in range(n) if i not in picked]
        minority_info = {'non_caucasian_total': len(minority),
                         'non_caucasian_in_fold_0': sum(i in picked for i in minority)}
        if minority_info['non_caucasian_in_fold_0'] < len(minority):
            logger.warning('Minority fold holds %d of %d non-Caucasian sequences (fold size %d)',
                           minority_info['non_caucasian_in_fold_0'], len(minority), slots)

    open_folds = [f for f in range(k) if capacities[f] > 0]
    _deal(remaining, labels, capacities, fold_of, open_folds, rng)
    updates = {'folds': k, 'minority_fold': minority_info}
    return dataset.with_folds(fold_of, **updates)


def _stratified_pick(candidates, labels, count, rng, already=()):
    """Pick ``count`` candidates keeping label counts (including ``already``) level."""
    pools = defaultdict(list)
    for i in candidates:
        pools[labels[i]].append(i)
    for label in pools:
        pools[label] = [pools[label][j] for j in rng.permutation(len(pools[label]))]
    tally = defaultdict(int)
    for i in already:
        tally[labels[i]] += 1
    picked = []
    while len(picked) < count:
        available = [label for label in sorted(pools) if pools[label]]
        if not available:
            break
        lowest = min(tally[label] for label in available)
        ties = [label for label in available if tally[label] == lowest]
        label = ties[int(rng.integers(len(ties)))]
        picked.append(pools[label].pop())
        tally[label] += 1
    return picked


def split_synthetic_by_identity(dataset, n_val_identities=5, rng=None):
    """Identity-disjoint (train, validation) split of a synthetic dataset."""
    identities = dataset.identity_ids()
    if n_val_identities < 0 or n_val_identities >= len(identities):
        raise ValidationError(
            'Cannot hold out %(n)d of %(total)d identities',
            params={'n': n_val_identities, 'total': len(identities)},
        )
    rng = rng if rng is not None else np.random.default_rng(0)
    held_out = {identities[i] for i in rng.choice(len(identities), n_val_identities, replace=False)}
    train = [i for i, s in enumerate(dataset) if s.identity_id not in held_out]
    val = [i for i, s in enumerate(dataset) if s.identity_id in held_out]
    return (dataset.subset(train, split='train'),
            dataset.subset(val, split='validation', validation_identities=sorted(held_out)))


def mixed_ratio_epoch(real_train, synth, ratio, rng):
    """Real training sequences plus a fresh synthetic draw for one epoch.

    floor(ratio * identities) identities are drawn without replacement and,
    for each of their signals, one of the rendered angles.
    """
    if not 0 < ratio <= 1:
        raise ValidationError('Synthetic ratio must lie in (0, 1], got %(r)s', params={'r': ratio})
    identities = synth.identity_ids()
    signals = sorted({s.signal_id for s in synth})
    n_identities = math.floor(ratio * len(identities))
    chosen = [identities[i] for i in sorted(rng.choice(len(identities), n_identities, replace=False))]
    groups = synth.groups
    picked = []
    for identity in chosen:
        for signal in signals:
            options = groups.get((identity, signal))
            if options:
                picked.append(synth[options[int(rng.integers(len(options)))]])
    combined = list(real_train) + picked
    return [combined[i] for i in rng.permutation(len(combined))]


def _record(seq, offset):
    return {
        'id': seq.sequence_id,
        'label': seq.label.label,
        'identity': seq.identity_id,
        'ethnicity': seq.ethnicity.value,
        'gender': seq.gender.value,
        'angle': seq.angle.as_list() if seq.angle is not None else None,
        'provenance': seq.provenance.value,
        'signal': seq.signal_id,
        'length': seq.length,
        'native_length': seq.native_length,
        'offset': offset,
    }


def save_dataset(dataset, path):
    """Write ``manifest.json`` + ``sequences.bin`` (little-endian float32, row-major)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    records, chunks, offset = [], [], 0
    for seq in dataset:
        chunk = np.ascontiguousarray(seq.values, dtype=_DTYPE).tobytes()
        records.append(_record(seq, offset))
        chunks.append(chunk)
        offset += len(chunk)
    payload = b''.join(chunks)
    counts = dataset.label_counts()
    manifest = {
        'schema_version': SCHEMA_VERSION,
        'seed': dataset.manifest.get('seed'),
        'channels': list(AU_CODES),
        'counts': {'total': len(dataset), **{label.label: counts[label] for label in EmotionLabel}},
        'data_bytes': len(payload),
        'crc32': zlib.crc32(payload),
        'fold_of': list(dataset.fold_of) if dataset.fold_of is not None else None,
        'config': dict(dataset.manifest),
        'records': records,
    }
    (path / DATA_NAME).write_bytes(payload)
    with open(path / MANIFEST_NAME, 'w', encoding='utf-8') as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    logger.info('Saved %d sequences to %s', len(dataset), path)
    return path


_LABEL_BY_NAME = {label.label: label for label in EmotionLabel}


def load_dataset(path):
    path = Path(path)
    try:
        with open(path / MANIFEST_NAME, encoding='utf-8') as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise ManifestError(f'No manifest in {path}') from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f'Corrupt manifest in {path}: {exc}') from exc

    try:
        if manifest['schema_version'] != SCHEMA_VERSION:
            raise ManifestError(f"Unsupported schema version {manifest['schema_version']}")
        records = manifest['records']
        expected_bytes = int(manifest['data_bytes'])
        expected_crc = int(manifest['crc32'])
        channels = manifest['channels']
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f'Manifest in {path} is missing fields: {exc}') from exc

    try:
        payload = (path / DATA_NAME).read_bytes()
    except FileNotFoundError as exc:
        raise ChecksumError(f'No data file in {path}') from exc
    if len(payload) != expected_bytes or zlib.crc32(payload) != expected_crc:
        raise ChecksumError(f'Checksum mismatch for {path / DATA_NAME}')
    if list(channels) != list(AU_CODES):
        raise DimensionMismatchError(f'Channel layout {channels} does not match {list(AU_CODES)}')

    row_bytes = N_CHANNELS * _DTYPE.itemsize
    sequences = []
    try:
        for rec in records:
            offset, length = int(rec['offset']), int(rec['length'])
            end = offset + length * row_bytes
            if length < 1 or offset < 0 or end > len(payload):
                raise DimensionMismatchError(f"Record {rec['id']} does not fit the data file")
            values = np.frombuffer(payload[offset:end], dtype=_DTYPE).reshape(length, N_CHANNELS)
            angle = rec.get('angle')
            sequences.append(LabeledSequence(
                sequence_id=rec['id'],
                values=values,
                label=_LABEL_BY_NAME[rec['label']],
                identity_id=rec['identity'],
                ethnicity=rec['ethnicity'],
                gender=rec['gender'],
                provenance=rec['provenance'],
                angle=ViewingAngle(*angle) if angle is not None else None,
                signal_id=rec.get('signal', ''),
                native_length=int(rec.get('native_length', length)),
            ))
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        raise ManifestError(f'Malformed record in {path}: {exc}') from exc
    return SequenceDataset(sequences, manifest.get('config', {}), manifest.get('fold_of'))
