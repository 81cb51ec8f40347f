"""Dynamic time warping and the nearest-neighbour baseline."""
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from .choices import EmotionLabel
from .exceptions import InfeasibleBandError

_CHUNK = 512


@dataclass(frozen=True)
class DTWConfig:
    """``band`` is a Sakoe-Chiba window width counting the diagonal.

    Cell (i, j) is reachable iff |i - j| <= band - 1, so band 1 allows only
    the diagonal. The end cell then needs |Ta - Tb| <= band - 1, so a band
    equal to the length gap is infeasible; a half-width reading (infeasible
    only for band < |Ta - Tb|) would accept it. ``None`` disables the window.
    """
    band: int | None = None

    def __post_init__(self):
        if self.band is not None and self.band < 1:
            raise ValidationError('DTW band must be at least 1')


def _as_2d(x):
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def _check_band(ta, tb, cfg):
    if ta < 1 or tb < 1:
        raise ValidationError('DTW needs non-empty sequences')
    if cfg.band is not None and cfg.band - 1 < abs(ta - tb):
        raise InfeasibleBandError(
            'Band %(band)d cannot align lengths %(ta)d and %(tb)d',
            params={'band': cfg.band, 'ta': ta, 'tb': tb},
        )


def _accumulate(cost, band):
    """DP over a stack of cost matrices [N, Ta, Tb], one anti-diagonal at a time.

    D(i,j) = c(i,j) + min(D(i-1,j), D(i,j-1), D(i-1,j-1)); every cell uses the
    same additions as the textbook row-by-row loop.
    """
    n, ta, tb = cost.shape
    acc = np.full((n, ta + 1, tb + 1), np.inf)
    acc[:, 0, 0] = 0.0
    for d in range(ta + tb - 1):
        i = np.arange(max(0, d - tb + 1), min(d, ta - 1) + 1)
        j = d - i
        if band is not None:
            keep = np.abs(i - j) <= band - 1
            i, j = i[keep], j[keep]
            if not i.size:
                continue
        best = np.minimum(np.minimum(acc[:, i, j + 1], acc[:, i + 1, j]), acc[:, i, j])
        acc[:, i + 1, j + 1] = cost[:, i, j] + best
    return acc[:, ta, tb]


def dtw_distance(a, b, cfg=None):
    """DTW distance with Euclidean frame cost and the symmetric step pattern."""
    cfg = cfg or DTWConfig()
    a, b = _as_2d(a), _as_2d(b)
    _check_band(a.shape[0], b.shape[0], cfg)
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    return float(_accumulate(cost[None], cfg.band)[0])


def dtw_distances(query, references, cfg=None):
    """Distances from one query to many references, batched by reference length."""
    cfg = cfg or DTWConfig()
    query = _as_2d(query)
    references = [_as_2d(r) for r in references]
    out = np.empty(len(references))
    by_length = defaultdict(list)
    for idx, ref in enumerate(references):
        _check_band(query.shape[0], ref.shape[0], cfg)
        by_length[ref.shape[0]].append(idx)
    for indices in by_length.values():
        for start in range(0, len(indices), _CHUNK):
            chunk = indices[start:start + _CHUNK]
            stack = np.stack([references[i] for i in chunk])
            cost = np.sqrt(((query[None, :, None, :] - stack[:, None, :, :]) ** 2).sum(axis=-1))
            out[chunk] = _accumulate(cost, cfg.band)
    return out


def _vote(labels, distances, k):
    """Majority over the k nearest; ties go to the smaller summed distance, then label order."""
    order = sorted(range(len(labels)), key=lambda i: (distances[i], int(labels[i])))[:k]
    votes = Counter(labels[i] for i in order)
    summed = defaultdict(float)
    for i in order:
        summed[labels[i]] += distances[i]
    return min(votes, key=lambda label: (-votes[label], summed[label], int(label)))


def knn_classify(train, query, k=1, cfg=None):
    if not train:
        raise ValidationError('KNN needs a non-empty training set')
    if not 1 <= k <= len(train):
        raise ValidationError('k must lie in 1..%(n)d', params={'n': len(train)})
    values = query.values if hasattr(query, 'values') else query
    distances = dtw_distances(values, [s.values for s in train], cfg)
    return EmotionLabel(_vote([s.label for s in train], distances, k))


class KNNClassifier:
    """1-NN (by default) DTW classifier with the fit/predict shape the pipeline expects."""

    def __init__(self, k=1, band=None):
        self.k = k
        self.cfg = DTWConfig(band)
        self._train = []

    def fit(self, sequences):
        if not sequences:
            raise ValidationError('KNN needs a non-empty training set')
        if not 1 <= self.k <= len(sequences):
            raise ValidationError('k must lie in 1..%(n)d', params={'n': len(sequences)})
        self._train = list(sequences)
        return self

    @property
    def references(self):
        return tuple(self._train)

    def predict(self, sequences):
        return [knn_classify(self._train, seq, self.k, self.cfg) for seq in sequences]

    def describe(self):
        return {'model': 'knn', 'k': self.k, 'band': self.cfg.band}
