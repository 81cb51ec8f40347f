import numpy as np

from expressions.choices import EmotionLabel, Ethnicity, Gender, Provenance
from expressions.sequences import N_CHANNELS, LabeledSequence, SequenceDataset


def make_sequence(values=None, label=EmotionLabel.CONFUSION, length=10, sequence_id='seq', identity='id-0',
                  ethnicity=Ethnicity.CAUCASIAN, gender=Gender.FEMALE, provenance=Provenance.SURROGATE_REAL,
                  signal=''):
    if values is None:
        values = np.linspace(0.0, 1.0, length * N_CHANNELS).reshape(length, N_CHANNELS)
    return LabeledSequence(
        sequence_id=sequence_id, values=values, label=label, identity_id=identity,
        ethnicity=ethnicity, gender=gender, provenance=provenance, signal_id=signal,
    )


def separable_dataset(per_label=12, length=20, folds=3, seed=0):
    """Class = index of the channel with the largest mean; trivially learnable."""
    rng = np.random.default_rng(seed)
    sequences, fold_of = [], []
    n = 0
    for label in EmotionLabel:
        for i in range(per_label):
            values = rng.uniform(0.0, 0.2, size=(length, N_CHANNELS))
            values[:, int(label)] += 0.7
            ethnicity = Ethnicity.ASIAN if i % 4 == 0 else Ethnicity.CAUCASIAN
            sequences.append(make_sequence(values, label, sequence_id=f'toy-{n:03d}', identity=f'toy-{i % 6}',
                                           ethnicity=ethnicity, gender=list(Gender)[i % 2]))
            fold_of.append(n % folds)
            n += 1
    return SequenceDataset(sequences, {'kind': 'toy'}, fold_of)
