"""Training strategies, cross-validation, metrics and the fairness comparison."""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from django.core.exceptions import ValidationError
from sklearn.metrics import confusion_matrix

from .choices import EmotionLabel, Ethnicity, Gender, ModelKind, StrategyKind, WindowMode
from .dataio import AugmentConfig, LengthPolicy, mixed_ratio_epoch, normalize_length, split_synthetic_by_identity
from .dtwknn import KNNClassifier
from .exceptions import UndefinedMetricsError
from .neuralnet import Adam, TrainConfig, build_inception_time, round_to_storage, set_freeze
from .neuralnet.training import evaluate_loss, predict, train_epoch

logger = logging.getLogger(__name__)

LABELS = list(EmotionLabel)


@dataclass(frozen=True)
class StrategySpec:
    kind: StrategyKind = StrategyKind.MIXED_RATIO
    model: ModelKind = ModelKind.INCEPTION
    ratio: float | None = 0.25
    length: int = 64
    freeze_blocks: int = 0
    pretrain_epochs: int = 20
    finetune_epochs: int = 50
    learning_rate: float = 1e-4
    finetune_learning_rate: float = 1e-4
    batch_size: int = 8
    augment: AugmentConfig | None = None
    knn_k: int = 1
    dtw_band: int | None = None
    n_val_identities: int = 5
    architecture: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'kind', StrategyKind(self.kind))
        object.__setattr__(self, 'model', ModelKind(self.model))
        for name in ('ratio', 'learning_rate', 'finetune_learning_rate'):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, float(getattr(self, name)))

    def validate(self):
        if (self.ratio is not None) != (self.kind == StrategyKind.MIXED_RATIO):
            raise ValidationError('A synthetic ratio goes with the mixed strategy and only with it')
        if self.ratio is not None and not 0 < self.ratio <= 1:
            raise ValidationError('Synthetic ratio must lie in (0, 1]')
        if self.model == ModelKind.KNN and self.kind != StrategyKind.REAL_ONLY:
            raise ValidationError('The KNN baseline is trained on real data only')
        if self.model == ModelKind.KNN and self.freeze_blocks:
            raise ValidationError('Freezing applies to InceptionTime only')
        if self.length < 1:
            raise ValidationError('Input length must be at least 1 frame')
        depth = self.architecture.get('depth', 6)
        if not 0 <= self.freeze_blocks <= depth:
            raise ValidationError('freeze_blocks must lie in 0..%(d)d', params={'d': depth})
        TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size)
        TrainConfig(learning_rate=self.finetune_learning_rate, batch_size=self.batch_size)
        return self

    def to_dict(self):
        data = asdict(self)
        data['kind'] = self.kind.value
        data['model'] = self.model.value
        data['augment'] = self.augment.to_dict() if self.augment else None
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if data.get('augment') is not None:
            data['augment'] = AugmentConfig.from_dict(data['augment'])
        return cls(**data)

    def variant_key(self):
        """Identifies the experiment; runs sharing a key differ only in their seed."""
        return json.dumps(self.to_dict(), sort_keys=True)

    def variant_name(self):
        """E.g. ``MixedRatio(0.25), InceptionTime, L=64: unfrozen + synthetic``."""
        strategy = self.kind.label if self.ratio is None else f'{self.kind.label}({self.ratio:g})'
        name = f'{strategy}, {self.model.label}, L={self.length}'
        if self.model == ModelKind.KNN:
            return name
        frozen = f'frozen({self.freeze_blocks})' if self.freeze_blocks else 'unfrozen'
        synthetic = 'no synthetic' if self.kind == StrategyKind.REAL_ONLY else 'synthetic'
        return f'{name}: {frozen} + {synthetic}'


@dataclass
class MetricsBundle:
    """Macro metrics in percent. Undefined per-class entries are listed in ``undefined``."""
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: dict
    undefined: list

    @property
    def flagged(self):
        return bool(self.undefined)

    def to_dict(self):
        return {**asdict(self), 'flagged': self.flagged}


def _mean_defined(values):
    defined = [v for v in values if v is not None]
    return 100.0 * float(np.mean(defined)) if defined else float('nan')


def compute_metrics(confusion):
    """Accuracy and macro precision/recall/F1 from a [true x predicted] matrix."""
    confusion = np.asarray(confusion, dtype=np.int64)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1] or (confusion < 0).any():
        raise ValidationError('Confusion matrix must be a square non-negative integer matrix')
    total = confusion.sum()
    if total == 0:
        raise UndefinedMetricsError('Metrics are undefined for an empty confusion matrix')
    diag = np.diag(confusion)
    rows = confusion.sum(axis=1)
    cols = confusion.sum(axis=0)
    per_class, undefined = {}, []
    precisions, recalls, f1s = [], [], []
    names = [label.label for label in LABELS] if len(confusion) == len(LABELS) else [str(i) for i in range(len(confusion))]
    for i, name in enumerate(names):
        precision = diag[i] / cols[i] if cols[i] else None
        recall = diag[i] / rows[i] if rows[i] else None
        if precision is None:
            undefined.append(f'precision:{name}')
        if recall is None:
            undefined.append(f'recall:{name}')
        if precision is None or recall is None:
            f1 = None
            undefined.append(f'f1:{name}')
        else:
            f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
        per_class[name] = {
            'precision': None if precision is None else 100.0 * precision,
            'recall': None if recall is None else 100.0 * recall,
            'f1': None if f1 is None else 100.0 * f1,
            'support': int(rows[i]),
        }
    return MetricsBundle(
        accuracy=100.0 * float(diag.sum()) / float(total),
        precision=_mean_defined(precisions),
        recall=_mean_defined(recalls),
        f1=_mean_defined(f1s),
        per_class=per_class,
        undefined=undefined,
    )


def group_accuracy(sequences, predictions):
    groups = {'ethnicity': {e.value: [0, 0] for e in Ethnicity},
              'gender': {g.value: [0, 0] for g in Gender}}
    for seq, pred in zip(sequences, predictions):
        hit = int(seq.label == pred)
        for key, value in (('ethnicity', seq.ethnicity.value), ('gender', seq.gender.value)):
            groups[key][value][0] += hit
            groups[key][value][1] += 1
    return {key: {name: {'correct': c, 'total': t, 'accuracy': 100.0 * c / t if t else None}
                  for name, (c, t) in table.items()}
            for key, table in groups.items()}


@dataclass
class EvalReport:
    confusion: np.ndarray
    metrics: MetricsBundle
    groups: dict
    test_fold: int | None
    test_ids: list
    predictions: list
    config: dict
    seed: int
    history: dict = field(default_factory=dict)

    @property
    def accuracy(self):
        return self.metrics.accuracy

    def to_dict(self):
        return {
            'test_fold': self.test_fold,
            'seed': self.seed,
            'config': self.config,
            'confusion': self.confusion.tolist(),
            'metrics': self.metrics.to_dict(),
            'groups': self.groups,
            'test_ids': list(self.test_ids),
            'predictions': self.predictions,
            'history': self.history,
        }

    @classmethod
    def from_dict(cls, data):
        confusion = np.asarray(data['confusion'], dtype=np.int64)
        return cls(
            confusion=confusion,
            metrics=compute_metrics(confusion),
            groups=data.get('groups', {}),
            test_fold=data.get('test_fold'),
            test_ids=list(data.get('test_ids', [])),
            predictions=list(data.get('predictions', [])),
            config=data.get('config', {}),
            seed=data.get('seed'),
            history=data.get('history', {}),
        )


def evaluate_predictions(sequences, predictions, config, seed, test_fold=None, history=None):
    y_true = [int(s.label) for s in sequences]
    y_pred = [int(p) for p in predictions]
    confusion = confusion_matrix(y_true, y_pred, labels=[int(label) for label in LABELS])
    return EvalReport(
        confusion=confusion.astype(np.int64),
        metrics=compute_metrics(confusion),
        groups=group_accuracy(sequences, predictions),
        test_fold=test_fold,
        test_ids=[s.sequence_id for s in sequences],
        predictions=[{'id': s.sequence_id, 'true': s.label.label, 'predicted': EmotionLabel(p).label}
                     for s, p in zip(sequences, y_pred)],
        config=config,
        seed=seed,
        history=history or {},
    )


class FoldRun(NamedTuple):
    model: object
    report: EvalReport
    trained_ids: frozenset


def _fit_inception(strategy, synth, train, rng, model_seed, history, trained_ids):
    model = build_inception_time(seed=model_seed, **strategy.architecture)
    set_freeze(model, strategy.freeze_blocks)
    policy = LengthPolicy(strategy.length)
    augment_cfg = strategy.augment
    batch_size = strategy.batch_size

    if strategy.kind == StrategyKind.PRETRAIN_FINETUNE:
        synth_train, synth_val = split_synthetic_by_identity(synth, strategy.n_val_identities, rng)
        history['pretrain_sizes'] = [len(synth_train), len(synth_val)]
        optimizer = Adam(model, TrainConfig(strategy.learning_rate, strategy.pretrain_epochs, batch_size))
        for epoch in range(strategy.pretrain_epochs):
            loss = train_epoch(model, optimizer, synth_train.sequences, policy, rng,
                               batch_size, augment_cfg, trained_ids)
            val_loss = evaluate_loss(model, synth_val.sequences, policy)
            history['pretrain_loss'].append(loss)
            history['synthetic_val_loss'].append(val_loss)
            logger.info('pretrain epoch %d/%d loss %.4f synthetic val loss %.4f',
                        epoch + 1, strategy.pretrain_epochs, loss, val_loss)

    lr = strategy.finetune_learning_rate if strategy.kind == StrategyKind.PRETRAIN_FINETUNE else strategy.learning_rate
    optimizer = Adam(model, TrainConfig(lr, strategy.finetune_epochs, batch_size))
    for epoch in range(strategy.finetune_epochs):
        if strategy.kind == StrategyKind.MIXED_RATIO:
            epoch_set = mixed_ratio_epoch(train, synth, strategy.ratio, rng)
        else:
            epoch_set = train
        loss = train_epoch(model, optimizer, epoch_set, policy, rng, batch_size, augment_cfg, trained_ids)
        history['epoch_sizes'].append(len(epoch_set))
        history['train_loss'].append(loss)
        logger.info('epoch %d/%d: %d sequences, loss %.4f',
                    epoch + 1, strategy.finetune_epochs, len(epoch_set), loss)
    return round_to_storage(model)


def run_strategy(strategy, synth, real, seed, test_fold=0):
    """Train one model per the strategy and evaluate it on the held-out fold."""
    strategy.validate()
    if real.fold_of is None:
        raise ValidationError('The real dataset has no fold assignment')
    if not 0 <= test_fold < real.n_folds:
        raise ValidationError('Test fold %(f)d does not exist', params={'f': test_fold})
    if strategy.kind != StrategyKind.REAL_ONLY and (synth is None or not len(synth)):
        raise ValidationError('This strategy needs the synthetic dataset')

    train = real.excluding_fold(test_fold)
    test = real.fold(test_fold)
    rng = np.random.default_rng([seed, test_fold])
    history = {'train_loss': [], 'epoch_sizes': [], 'pretrain_loss': [], 'synthetic_val_loss': []}
    trained_ids = set()
    policy = LengthPolicy(strategy.length, WindowMode.TEST_CENTER)

    if strategy.model == ModelKind.KNN:
        references = [normalize_length(seq, policy) for seq in train]
        trained_ids.update(seq.sequence_id for seq in references)
        model = KNNClassifier(strategy.knn_k, strategy.dtw_band).fit(references)
        predictions = model.predict([normalize_length(seq, policy) for seq in test])
    else:
        model_seed = int(rng.integers(2**31 - 1))
        model = _fit_inception(strategy, synth, train, rng, model_seed, history, trained_ids)
        predictions, _ = predict(model, test, policy)

    leaked = trained_ids.intersection(seq.sequence_id for seq in test)
    if leaked:
        raise RuntimeError(f'Test-fold sequences reached training: {sorted(leaked)[:5]}')

    report = evaluate_predictions(test, predictions, strategy.to_dict(), seed, test_fold, history)
    logger.info('fold %d: accuracy %.1f%% on %d sequences', test_fold, report.accuracy, len(test))
    return FoldRun(model, report, frozenset(trained_ids))


@dataclass
class CombinedReport:
    """Fold results merged two ways: pooled confusion matrix and per-fold averages."""
    confusion: np.ndarray
    pooled: MetricsBundle
    averaged: dict
    groups: dict
    folds: int
    seed: int
    config: dict

    @property
    def accuracy(self):
        return self.pooled.accuracy

    def to_dict(self):
        return {
            'folds': self.folds,
            'seed': self.seed,
            'config': self.config,
            'confusion': self.confusion.tolist(),
            'pooled': self.pooled.to_dict(),
            'averaged': self.averaged,
            'groups': self.groups,
        }


def mean_std(values):
    values = [v for v in values if v is not None and not math.isnan(v)]
    if not values:
        return {'mean': None, 'std': None}
    return {'mean': float(np.mean(values)), 'std': float(np.std(values))}


def _merge_groups(reports):
    groups = {}
    for report in reports:
        for key, table in report.groups.items():
            for name, cell in table.items():
                merged = groups.setdefault(key, {}).setdefault(name, {'correct': 0, 'total': 0})
                merged['correct'] += cell['correct']
                merged['total'] += cell['total']
    for table in groups.values():
        for cell in table.values():
            cell['accuracy'] = 100.0 * cell['correct'] / cell['total'] if cell['total'] else None
    return groups


def combine_reports(reports, seed, config):
    confusion = np.sum([r.confusion for r in reports], axis=0).astype(np.int64)
    averaged = {name: mean_std([getattr(r.metrics, name) for r in reports])
                for name in ('accuracy', 'precision', 'recall', 'f1')}
    groups = _merge_groups(reports)
    return CombinedReport(confusion, compute_metrics(confusion), averaged, groups, len(reports), seed, config)


class CrossValidation(NamedTuple):
    runs: list
    combined: CombinedReport

    @property
    def reports(self):
        return [run.report for run in self.runs]


def cross_validate(strategy, synth, real, k=None, seed=0, jobs=1, folds=None):
    """One fresh model per test fold; folds may run in parallel, results merge in fold order.

    ``folds`` restricts the run to some test folds, e.g. [0] for the minority fold alone.
    """
    strategy.validate()
    if real.fold_of is None:
        raise ValidationError('The real dataset has no fold assignment')
    k = k or real.n_folds
    if k != real.n_folds:
        raise ValidationError('Dataset has %(n)d folds, %(k)d requested', params={'n': real.n_folds, 'k': k})
    folds = sorted(set(folds)) if folds is not None else list(range(k))
    if not folds or not all(0 <= f < k for f in folds):
        raise ValidationError('Test folds must lie in 0..%(last)d', params={'last': k - 1})
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(lambda fold: run_strategy(strategy, synth, real, seed, fold), folds))
    else:
        runs = [run_strategy(strategy, synth, real, seed, fold) for fold in folds]
    combined = combine_reports([run.report for run in runs], seed, strategy.to_dict())
    logger.info('cross-validation: pooled accuracy %.1f%%, mean fold accuracy %.1f%%',
                combined.pooled.accuracy, combined.averaged['accuracy']['mean'])
    return CrossValidation(runs, combined)


def fairness_report(variant_reports, base):
    """Minority-fold accuracy per variant and its change against ``base``."""
    if base not in variant_reports:
        raise ValidationError('Base variant %(b)s is missing', params={'b': base})
    reference_ids = sorted(variant_reports[base].test_ids)
    for name, report in variant_reports.items():
        if sorted(report.test_ids) != reference_ids:
            raise ValidationError('Variant %(v)s was evaluated on a different test fold', params={'v': name})
    base_accuracy = variant_reports[base].accuracy
    return [
        {'variant': name, 'accuracy': report.accuracy, 'delta': report.accuracy - base_accuracy,
         'is_base': name == base}
        for name, report in variant_reports.items()
    ]


def pool_reports(reports):
    """Merge reports evaluated on one test fold, e.g. the same variant over several seeds."""
    if not reports:
        raise ValidationError('Nothing to pool')
    reference = sorted(reports[0].test_ids)
    if any(sorted(r.test_ids) != reference for r in reports):
        raise ValidationError('Reports to pool were evaluated on different test folds')
    confusion = np.sum([r.confusion for r in reports], axis=0).astype(np.int64)
    return EvalReport(
        confusion=confusion,
        metrics=compute_metrics(confusion),
        groups=_merge_groups(reports),
        test_fold=reports[0].test_fold,
        test_ids=list(reports[0].test_ids),
        predictions=[],
        config=reports[0].config,
        seed=None,
        history={'seeds': [r.seed for r in reports]},
    )
