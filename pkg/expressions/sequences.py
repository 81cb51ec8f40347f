"""Core data types shared by generation, I/O and training."""
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from functools import cached_property
from types import MappingProxyType

import numpy as np
from django.core.exceptions import ValidationError

from .choices import EmotionLabel, Ethnicity, Gender, Provenance


@dataclass(frozen=True)
class AUChannel:
    code: str
    name: str


AU_CHANNELS = (
    AUChannel('AU1', 'Inner brow raiser'),
    AUChannel('AU4', 'Brow lowerer'),
    AUChannel('AU5', 'Upper lid raiser'),
    AUChannel('AU7', 'Lid tightener'),
    AUChannel('AU9', 'Nose wrinkler'),
    AUChannel('AU10', 'Upper lip raiser'),
    AUChannel('AU15', 'Lip corner depressor'),
    AUChannel('AU16', 'Lower lip depressor'),
    AUChannel('AU17', 'Chin raiser'),
    AUChannel('AU23', 'Lip tightener'),
    AUChannel('AU25', 'Lips part'),
    AUChannel('AU26', 'Jaw drop'),
    AUChannel('AU61', 'Eyes left'),
    AUChannel('AU62', 'Eyes right'),
)
AU_CODES = tuple(channel.code for channel in AU_CHANNELS)
CHANNEL_INDEX = MappingProxyType({code: i for i, code in enumerate(AU_CODES)})
N_CHANNELS = len(AU_CHANNELS)


@dataclass(frozen=True, order=True)
class ViewingAngle:
    h_rot: float
    v_rot: float

    def as_list(self):
        return [self.h_rot, self.v_rot]

    def __str__(self):
        return f'h{self.h_rot:+g}v{self.v_rot:+g}'


@dataclass(frozen=True, eq=False)
class LabeledSequence:
    """A [T x 14] AU intensity series with its label and provenance.

    ``values`` is stored as a read-only float32 array; ``native_length`` keeps
    the frame count of the clip this sequence was cut from.
    """
    sequence_id: str
    values: np.ndarray
    label: EmotionLabel
    identity_id: str
    ethnicity: Ethnicity
    gender: Gender
    provenance: Provenance
    angle: ViewingAngle | None = None
    signal_id: str = ''
    native_length: int = field(default=0)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32, copy=True)
        if values.ndim != 2 or values.shape[1] != N_CHANNELS:
            raise ValidationError(
                'Sequence %(id)s must have shape [T x %(d)d], got %(shape)s',
                params={'id': self.sequence_id, 'd': N_CHANNELS, 'shape': values.shape},
            )
        if values.shape[0] < 1:
            raise ValidationError('Sequence %(id)s is empty', params={'id': self.sequence_id})
        if not np.all(np.isfinite(values)):
            raise ValidationError('Sequence %(id)s has non-finite values', params={'id': self.sequence_id})
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'label', EmotionLabel(self.label))
        object.__setattr__(self, 'ethnicity', Ethnicity(self.ethnicity))
        object.__setattr__(self, 'gender', Gender(self.gender))
        object.__setattr__(self, 'provenance', Provenance(self.provenance))
        if not self.native_length:
            object.__setattr__(self, 'native_length', values.shape[0])

    @property
    def length(self):
        return self.values.shape[0]

    def with_values(self, values):
        return replace(self, values=values)


class SequenceDataset:
    """An immutable collection of sequences with optional fold assignments."""

    def __init__(self, sequences, manifest=None, fold_of=None):
        self._sequences = tuple(sequences)
        self._manifest = MappingProxyType(dict(manifest or {}))
        if fold_of is not None:
            fold_of = tuple(int(f) for f in fold_of)
            if len(fold_of) != len(self._sequences):
                raise ValidationError('Fold assignment must cover every sequence')
            if fold_of and min(fold_of) < 0:
                raise ValidationError('Fold indices must be non-negative')
        self._fold_of = fold_of

    def __len__(self):
        return len(self._sequences)

    def __iter__(self):
        return iter(self._sequences)

    def __getitem__(self, index):
        return self._sequences[index]

    @property
    def sequences(self):
        return self._sequences

    @property
    def manifest(self):
        return self._manifest

    @property
    def fold_of(self):
        return self._fold_of

    @property
    def n_folds(self):
        return max(self._fold_of) + 1 if self._fold_of else 0

    def with_folds(self, fold_of, **manifest_updates):
        manifest = dict(self._manifest)
        manifest.update(manifest_updates)
        return SequenceDataset(self._sequences, manifest, fold_of)

    def subset(self, indices, **manifest_updates):
        indices = list(indices)
        manifest = dict(self._manifest)
        manifest.update(manifest_updates)
        folds = [self._fold_of[i] for i in indices] if self._fold_of is not None else None
        return SequenceDataset([self._sequences[i] for i in indices], manifest, folds)

    def fold(self, index):
        if self._fold_of is None:
            raise ValidationError('Dataset has no fold assignment')
        return [s for s, f in zip(self._sequences, self._fold_of) if f == index]

    def excluding_fold(self, index):
        if self._fold_of is None:
            raise ValidationError('Dataset has no fold assignment')
        return [s for s, f in zip(self._sequences, self._fold_of) if f != index]

    def label_counts(self):
        counts = Counter(s.label for s in self._sequences)
        return {label: counts.get(label, 0) for label in EmotionLabel}

    def identity_ids(self):
        return sorted({s.identity_id for s in self._sequences})

    @cached_property
    def groups(self):
        """(identity, signal) -> indices of the sequences rendered for that pair."""
        index = defaultdict(list)
        for i, seq in enumerate(self._sequences):
            index[(seq.identity_id, seq.signal_id)].append(i)
        return MappingProxyType({key: tuple(value) for key, value in index.items()})
