"""Mini-batch loops shared by every training strategy."""
import numpy as np

from ..choices import EmotionLabel, WindowMode
from ..dataio import augment, normalize_length


def to_batch(sequences):
    """Stack equal-length sequences into ([B x 14 x T] float64, labels)."""
    x = np.stack([seq.values for seq in sequences]).astype(np.float64).transpose(0, 2, 1)
    y = np.array([int(seq.label) for seq in sequences], dtype=np.int64)
    return np.ascontiguousarray(x), y


def minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(model, optimizer, sequences, policy, rng, batch_size=8, augment_cfg=None, seen_ids=None):
    """One pass in seeded-shuffle order; returns the mean batch loss.

    Every sequence is cut with a fresh random window and, if configured,
    augmented once. Ids of everything trained on are added to ``seen_ids``.
    """
    window = policy.for_mode(WindowMode.TRAIN_RANDOM)
    prepared = []
    for seq in sequences:
        seq = normalize_length(seq, window, rng)
        if augment_cfg is not None:
            seq = augment(seq, augment_cfg, rng)
        prepared.append(seq)
    losses = []
    for batch in minibatches(len(prepared), batch_size, rng):
        members = [prepared[i] for i in batch]
        if seen_ids is not None:
            seen_ids.update(seq.sequence_id for seq in members)
        x, y = to_batch(members)
        loss, _ = model.loss_and_grads(x, y)
        optimizer.step()
        losses.append(loss * len(batch))
    return float(np.sum(losses) / max(len(prepared), 1))


def _centered(sequences, policy):
    window = policy.for_mode(WindowMode.TEST_CENTER)
    return [normalize_length(seq, window) for seq in sequences]


def evaluate_loss(model, sequences, policy, batch_size=64):
    """Eval-mode cross-entropy with centre windows; never touches an rng."""
    if not sequences:
        return float('nan')
    prepared = _centered(sequences, policy)
    total = 0.0
    for start in range(0, len(prepared), batch_size):
        x, y = to_batch(prepared[start:start + batch_size])
        total += model.loss(x, y, training=False) * len(y)
    return total / len(prepared)


def predict(model, sequences, policy, batch_size=64):
    """Predicted labels and class probabilities, eval mode, centre windows."""
    prepared = _centered(sequences, policy)
    probs = []
    for start in range(0, len(prepared), batch_size):
        x, _ = to_batch(prepared[start:start + batch_size])
        probs.append(model.predict_proba(x))
    probs = np.concatenate(probs) if probs else np.zeros((0, len(EmotionLabel)))
    return [EmotionLabel(int(i)) for i in probs.argmax(axis=1)], probs
