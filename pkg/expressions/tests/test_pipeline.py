import math

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase, tag
from numpy.testing import assert_array_equal

from expressions.choices import EmotionLabel, ModelKind, StrategyKind
from expressions.conf import sim2real_setting
from expressions.dataio import assign_folds
from expressions.exceptions import UndefinedMetricsError
from expressions.pipeline import (
    EvalReport, StrategySpec, compute_metrics, cross_validate, evaluate_predictions, fairness_report,
    group_accuracy, pool_reports, run_strategy,
)
from expressions.signalgen import (
    NoiseConfig, angle_grid, canonical_signals, generate_identity_suite, generate_surrogate_real,
    generate_synthetic_dataset,
)
from expressions.tests.utils import make_sequence, separable_dataset

REAL_NOISE = NoiseConfig(additive_sigma=0.05, jitter_frames=2, drift_amplitude=0.05, occlusion_prob=0.05)
TINY = {'depth': 1, 'n_filters': 2, 'bottleneck': 2, 'kernel_sizes': [3, 5]}
KNN = StrategySpec(kind=StrategyKind.REAL_ONLY, model=ModelKind.KNN, ratio=None, length=25)


def surrogate_real():
    return assign_folds(generate_surrogate_real(0, REAL_NOISE, 0), 5, rng=np.random.default_rng(0))


def report(confusion, test_ids, seed=0):
    confusion = np.asarray(confusion, dtype=np.int64)
    return EvalReport(confusion, compute_metrics(confusion), {}, 0, list(test_ids), [], {}, seed)


class MetricsTests(SimpleTestCase):

    def test_perfect_diagonal(self):
        metrics = compute_metrics(np.diag([4, 5, 6]))
        self.assertEqual((metrics.accuracy, metrics.precision, metrics.recall, metrics.f1),
                         (100.0, 100.0, 100.0, 100.0))
        self.assertFalse(metrics.flagged)

    def test_uniform_confusion(self):
        metrics = compute_metrics(np.full((3, 3), 5))
        for value in (metrics.accuracy, metrics.precision, metrics.recall, metrics.f1):
            self.assertAlmostEqual(value, 100.0 / 3)

    def test_class_never_predicted_is_flagged(self):
        metrics = compute_metrics([[5, 0, 0], [0, 5, 0], [2, 3, 0]])
        self.assertTrue(metrics.flagged)
        self.assertIn('precision:Disgust', metrics.undefined)
        self.assertIn('f1:Disgust', metrics.undefined)
        self.assertIsNone(metrics.per_class['Disgust']['precision'])
        self.assertAlmostEqual(metrics.precision, 100.0 * (5 / 7 + 5 / 8) / 2)
        self.assertAlmostEqual(metrics.recall, 100.0 * 2 / 3)

    def test_empty_matrix(self):
        with self.assertRaises(UndefinedMetricsError):
            compute_metrics(np.zeros((3, 3), dtype=int))

    def test_group_accuracy(self):
        sequences = [
            make_sequence(label=EmotionLabel.ANGER, sequence_id='a', ethnicity='Asian', gender='M'),
            make_sequence(label=EmotionLabel.ANGER, sequence_id='b', ethnicity='Asian', gender='F'),
            make_sequence(label=EmotionLabel.DISGUST, sequence_id='c'),
        ]
        groups = group_accuracy(sequences, [EmotionLabel.ANGER, EmotionLabel.DISGUST, EmotionLabel.DISGUST])
        self.assertEqual(groups['ethnicity']['Asian'], {'correct': 1, 'total': 2, 'accuracy': 50.0})
        self.assertEqual(groups['ethnicity']['Caucasian']['accuracy'], 100.0)
        self.assertIsNone(groups['ethnicity']['Black']['accuracy'])
        self.assertEqual(groups['gender']['F']['total'], 2)

    def test_evaluate_predictions(self):
        sequences = [make_sequence(label=label, sequence_id=str(int(label))) for label in EmotionLabel]
        result = evaluate_predictions(sequences, [EmotionLabel.CONFUSION] * 3, {}, seed=1, test_fold=2)
        assert_array_equal(result.confusion, [[1, 0, 0], [1, 0, 0], [1, 0, 0]])
        self.assertAlmostEqual(result.accuracy, 100.0 / 3)
        self.assertEqual(result.predictions[1], {'id': '1', 'true': 'Anger', 'predicted': 'Confusion'})
        self.assertEqual(EvalReport.from_dict(result.to_dict()).accuracy, result.accuracy)


class StrategySpecTests(SimpleTestCase):

    def test_defaults_are_valid(self):
        spec = StrategySpec().validate()
        self.assertEqual(spec.variant_name(), 'MixedRatio(0.25), InceptionTime, L=64: unfrozen + synthetic')

    def test_ratio_only_with_mixed(self):
        with self.assertRaises(ValidationError):
            StrategySpec(kind=StrategyKind.REAL_ONLY).validate()
        with self.assertRaises(ValidationError):
            StrategySpec(ratio=None).validate()
        with self.assertRaises(ValidationError):
            StrategySpec(ratio=0.0).validate()

    def test_knn_constraints(self):
        with self.assertRaises(ValidationError):
            StrategySpec(model=ModelKind.KNN).validate()
        with self.assertRaises(ValidationError):
            StrategySpec(kind=StrategyKind.REAL_ONLY, model=ModelKind.KNN, ratio=None, freeze_blocks=1).validate()
        KNN.validate()

    def test_freeze_range(self):
        with self.assertRaises(ValidationError):
            StrategySpec(freeze_blocks=7).validate()
        with self.assertRaises(ValidationError):
            StrategySpec(freeze_blocks=2, architecture={'depth': 1}).validate()

    def test_round_trip_and_variant_names(self):
        spec = StrategySpec(kind='real-only', ratio=None, freeze_blocks=3, architecture=TINY | {'depth': 3})
        self.assertEqual(StrategySpec.from_dict(spec.to_dict()), spec)
        self.assertEqual(spec.variant_name(), 'RealOnly, InceptionTime, L=64: frozen(3) + no synthetic')
        self.assertEqual(KNN.variant_name(), 'RealOnly, KNN-DTW, L=25')

    def test_variants_differ_by_strategy_ratio_and_length(self):
        specs = [
            StrategySpec(),
            StrategySpec(ratio=1.0, length=25),
            StrategySpec(kind=StrategyKind.PRETRAIN_FINETUNE, ratio=None),
            StrategySpec(kind=StrategyKind.REAL_ONLY, ratio=None),
            KNN,
        ]
        self.assertEqual(len({spec.variant_name() for spec in specs}), 5)
        self.assertEqual(len({spec.variant_key() for spec in specs}), 5)

    def test_key_ignores_number_spelling_but_not_settings(self):
        self.assertEqual(StrategySpec(ratio=1).variant_key(), StrategySpec(ratio=1.0).variant_key())
        self.assertNotEqual(StrategySpec().variant_key(), StrategySpec(finetune_epochs=10).variant_key())
        self.assertEqual(StrategySpec(finetune_epochs=10).variant_name(), StrategySpec().variant_name())


class KNNCrossValidationTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.real = surrogate_real()
        cls.result = cross_validate(KNN, None, cls.real, seed=0)

    def test_folds_partition_the_dataset(self):
        ids = [i for r in self.result.reports for i in r.test_ids]
        self.assertEqual(len(ids), 123)
        self.assertEqual(set(ids), {s.sequence_id for s in self.real})
        self.assertEqual([r.test_fold for r in self.result.reports], [0, 1, 2, 3, 4])

    def test_training_never_sees_the_test_fold(self):
        for run in self.result.runs:
            self.assertFalse(run.trained_ids & set(run.report.test_ids))
            self.assertEqual(len(run.trained_ids), 123 - len(run.report.test_ids))

    def test_combined_confusion_is_the_sum(self):
        combined = self.result.combined
        self.assertEqual(combined.confusion.sum(), 123)
        assert_array_equal(combined.confusion, sum(r.confusion for r in self.result.reports))
        accuracies = [r.accuracy for r in self.result.reports]
        self.assertAlmostEqual(combined.averaged['accuracy']['mean'], np.mean(accuracies))
        self.assertEqual(combined.folds, 5)
        self.assertEqual(sum(c['total'] for c in combined.groups['ethnicity'].values()), 123)

    def test_deterministic_and_parallel_runs_agree(self):
        again = cross_validate(KNN, None, self.real, seed=0, jobs=2)
        for first, second in zip(self.result.reports, again.reports):
            assert_array_equal(first.confusion, second.confusion)
            self.assertEqual(first.predictions, second.predictions)

    def test_selected_folds(self):
        only = cross_validate(KNN, None, self.real, seed=0, folds=[0])
        self.assertEqual(len(only.runs), 1)
        assert_array_equal(only.combined.confusion, self.result.reports[0].confusion)
        with self.assertRaises(ValidationError):
            cross_validate(KNN, None, self.real, folds=[5])

    def test_wrong_fold_count(self):
        with self.assertRaises(ValidationError):
            cross_validate(KNN, None, self.real, k=4)


class InceptionStrategyTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.real = surrogate_real()
        cls.synth = generate_synthetic_dataset(generate_identity_suite(0, size=4), canonical_signals(),
                                               angle_grid()[:2], NoiseConfig(additive_sigma=0.02), seed=0)

    def test_mixed_epochs_add_a_fresh_synthetic_draw(self):
        spec = StrategySpec(ratio=0.25, length=16, finetune_epochs=2, architecture=TINY)
        run = run_strategy(spec, self.synth, self.real, seed=0, test_fold=0)
        self.assertEqual(run.report.history['epoch_sizes'], [98 + 21] * 2)
        self.assertEqual(len(run.report.history['train_loss']), 2)
        self.assertTrue(any(i.startswith('syn-') for i in run.trained_ids))
        self.assertFalse(run.trained_ids & set(run.report.test_ids))

    def test_pretrain_uses_an_identity_disjoint_validation_split(self):
        spec = StrategySpec(kind=StrategyKind.PRETRAIN_FINETUNE, ratio=None, length=16, pretrain_epochs=1,
                            finetune_epochs=1, n_val_identities=1, architecture=TINY)
        history = run_strategy(spec, self.synth, self.real, seed=0, test_fold=1).report.history
        self.assertEqual(history['pretrain_sizes'], [3 * 21 * 2, 21 * 2])
        self.assertEqual(len(history['synthetic_val_loss']), 1)
        self.assertTrue(math.isfinite(history['pretrain_loss'][0]))
        self.assertEqual(history['epoch_sizes'], [len(self.real) - len(self.real.fold(1))])

    def test_synthetic_strategies_need_synthetic_data(self):
        with self.assertRaises(ValidationError):
            run_strategy(StrategySpec(architecture=TINY), None, self.real, seed=0)

    def test_same_seed_same_report(self):
        spec = StrategySpec(kind=StrategyKind.REAL_ONLY, ratio=None, length=16, finetune_epochs=1,
                            architecture=TINY)
        first = run_strategy(spec, None, self.real, seed=3, test_fold=2).report
        second = run_strategy(spec, None, self.real, seed=3, test_fold=2).report
        assert_array_equal(first.confusion, second.confusion)
        self.assertEqual(first.history['train_loss'], second.history['train_loss'])


class FairnessTests(SimpleTestCase):

    ids = [f'r{i:03d}' for i in range(25)]

    def test_delta_against_base(self):
        rows = fairness_report({
            'frozen(3) + no synthetic': report([[6, 1, 1], [1, 6, 1], [2, 1, 6]], self.ids),
            'unfrozen + synthetic': report([[7, 1, 0], [0, 8, 0], [1, 1, 7]], self.ids),
        }, base='frozen(3) + no synthetic')
        self.assertAlmostEqual(rows[0]['accuracy'], 72.0)
        self.assertTrue(rows[0]['is_base'])
        self.assertAlmostEqual(rows[1]['accuracy'], 88.0)
        self.assertAlmostEqual(rows[1]['delta'], 16.0)

    def test_different_test_folds(self):
        with self.assertRaises(ValidationError):
            fairness_report({'a': report(np.diag([8, 8, 9]), self.ids),
                             'b': report(np.diag([8, 8, 9]), self.ids[:-1] + ['x'])}, base='a')

    def test_missing_base(self):
        with self.assertRaises(ValidationError):
            fairness_report({'a': report(np.diag([8, 8, 9]), self.ids)}, base='b')

    def test_pooling_seeds(self):
        pooled = pool_reports([report([[6, 1, 1], [1, 6, 1], [2, 1, 6]], self.ids, seed=0),
                               report([[7, 1, 0], [0, 8, 0], [1, 1, 7]], self.ids, seed=1)])
        self.assertEqual(pooled.confusion.sum(), 50)
        self.assertAlmostEqual(pooled.accuracy, 80.0)
        self.assertIsNone(pooled.seed)
        self.assertEqual(pooled.history, {'seeds': [0, 1]})
        with self.assertRaises(ValidationError):
            pool_reports([report(np.diag([8, 8, 9]), self.ids), report(np.diag([8, 8, 9]), ['x'] * 25)])


@tag('slow')
class SeparableDataTests(SimpleTestCase):

    def test_inception_learns_a_separable_problem(self):
        data = separable_dataset()
        spec = StrategySpec(kind=StrategyKind.REAL_ONLY, ratio=None, length=20, finetune_epochs=30,
                            learning_rate=1e-2, architecture={'depth': 2, 'n_filters': 4, 'bottleneck': 4,
                                                              'kernel_sizes': [3, 5, 9], 'residual_every': 2})
        result = cross_validate(spec, None, data, seed=0)
        self.assertGreaterEqual(result.combined.accuracy, 95.0)


def default_datasets(seed=0):
    """What the generate command writes with its default settings."""
    synthetic_noise = NoiseConfig.from_dict(sim2real_setting('SYNTHETIC_NOISE'))
    synth = generate_synthetic_dataset(generate_identity_suite(seed), canonical_signals(), angle_grid(),
                                       synthetic_noise, seed)
    real = generate_surrogate_real(seed, NoiseConfig.from_dict(sim2real_setting('REAL_NOISE')), seed,
                                   synthetic_noise=synthetic_noise)
    return synth, assign_folds(real, 5, rng=np.random.default_rng([seed, 2]))


@tag('slow', 'desk-scale')
class SyntheticDataBenefitTests(SimpleTestCase):
    """Full InceptionTime at L=25 on the default datasets, five training seeds per strategy."""
    seeds = range(5)
    strategies = {
        'real-only': StrategySpec(kind=StrategyKind.REAL_ONLY, ratio=None, length=25),
        'pretrain-finetune': StrategySpec(kind=StrategyKind.PRETRAIN_FINETUNE, ratio=None, length=25),
        'mixed': StrategySpec(ratio=0.25, length=25),
    }

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.synth, cls.real = default_datasets()
        cls.results = {
            name: [cross_validate(spec, cls.synth, cls.real, seed=seed, jobs=5) for seed in cls.seeds]
            for name, spec in cls.strategies.items()
        }

    def mean_accuracy(self, name):
        return float(np.mean([cv.combined.averaged['accuracy']['mean'] for cv in self.results[name]]))

    def minority_reports(self, spec):
        return [cross_validate(spec, self.synth, self.real, seed=seed, folds=[0]).reports[0] for seed in self.seeds]

    def test_synthetic_strategies_beat_real_only(self):
        baseline = self.mean_accuracy('real-only')
        for name in ('pretrain-finetune', 'mixed'):
            self.assertGreaterEqual(self.mean_accuracy(name) - baseline, 5.0,
                                    f'{name} {self.mean_accuracy(name):.1f} vs real-only {baseline:.1f}')

    def test_synthetic_data_helps_the_minority_fold(self):
        frozen = 3
        variants = {
            'unfrozen + synthetic': [cv.reports[0] for cv in self.results['mixed']],
            'unfrozen + no synthetic': [cv.reports[0] for cv in self.results['real-only']],
            'frozen + synthetic': self.minority_reports(
                StrategySpec(ratio=0.25, length=25, freeze_blocks=frozen)),
            'frozen + no synthetic': self.minority_reports(
                StrategySpec(kind=StrategyKind.REAL_ONLY, ratio=None, length=25, freeze_blocks=frozen)),
        }
        self.assertTrue(all(r.test_fold == 0 for reports in variants.values() for r in reports))
        rows = fairness_report({name: pool_reports(reports) for name, reports in variants.items()},
                               base='frozen + no synthetic')
        self.assertEqual(len(rows), 4)
        by_name = {row['variant']: row for row in rows}
        self.assertEqual(by_name['frozen + no synthetic']['delta'], 0.0)
        self.assertGreaterEqual(by_name['unfrozen + synthetic']['delta'], 5.0, rows)
