from dataclasses import asdict, dataclass, field

import numpy as np
from django.core.exceptions import ValidationError


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 20
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError('learning_rate must be positive')
        if self.batch_size < 1:
            raise ValidationError('batch_size must be at least 1')
        if self.epochs < 0:
            raise ValidationError('epochs must be non-negative')

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, cfg, frozen=frozenset()):
    """Bias-corrected Adam update, in place; names in ``frozen`` are skipped entirely."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, param in params.items():
        if name in frozen:
            continue
        grad = grads[name]
        m = state.m.setdefault(name, np.zeros_like(param))
        v = state.v.setdefault(name, np.zeros_like(param))
        if m.shape != param.shape or v.shape != param.shape:
            raise ValidationError('Adam state for %(name)s does not match its parameter', params={'name': name})
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (grad * grad)
        param -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params, state


class Adam:
    def __init__(self, model, cfg):
        self.model = model
        self.cfg = cfg
        self.state = AdamState()

    def step(self):
        adam_step(self.model.parameters(), self.model.gradients(), self.state, self.cfg,
                  frozen=self.model.frozen_names())
