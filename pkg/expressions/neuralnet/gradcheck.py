"""Analytic-vs-numerical gradient comparison for a whole model."""
import logging
from dataclasses import asdict, dataclass

import numpy as np

logger = logging.getLogger(__name__)

GRAD_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_coords: int
    tolerance: float
    worst_param: str
    worst_index: int
    n_params: int
    finite: bool

    @property
    def passed(self):
        return self.finite and self.max_rel_error < self.tolerance

    def to_dict(self):
        return {**asdict(self), 'passed': self.passed}


def relative_error(analytic, numeric, floor=GRAD_FLOOR):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(model, x, labels, tolerance=1e-4, n_coords=200, step=1e-5, seed=0):
    """Compare backprop against central differences on sampled coordinates.

    Batch norm runs in training mode without touching running statistics, so
    every loss evaluation sees the same function.
    """
    model.loss_and_grads(x, labels, update_stats=False)
    params = model.parameters()
    frozen = model.frozen_names()
    analytic = {name: grad.copy() for name, grad in model.gradients().items()}
    names = [name for name in params if name not in frozen]
    coords = [(name, i) for name in names for i in range(params[name].size)]
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(coords), min(n_coords, len(coords)), replace=False)

    worst = (0.0, '', -1)
    finite = all(np.all(np.isfinite(analytic[name])) for name in names)
    for c in picked:
        name, i = coords[c]
        flat = params[name].reshape(-1)
        original = flat[i]
        flat[i] = original + step
        plus = model.loss(x, labels)
        flat[i] = original - step
        minus = model.loss(x, labels)
        flat[i] = original
        numeric = (plus - minus) / (2.0 * step)
        finite = finite and np.isfinite(numeric)
        err = relative_error(analytic[name].reshape(-1)[i], numeric)
        if err > worst[0]:
            worst = (err, name, int(i))

    report = GradCheckReport(
        max_rel_error=float(worst[0]), n_coords=len(picked), tolerance=tolerance,
        worst_param=worst[1], worst_index=worst[2], n_params=model.n_params, finite=bool(finite),
    )
    logger.info('Gradient check: max relative error %.3e over %d coordinates (%s)',
                report.max_rel_error, report.n_coords, 'pass' if report.passed else 'FAIL')
    return report
