"""Training objective and a central-difference gradient checker."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .errors import ConfigError, NumericError

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
DEFAULT_ALPHA = 0.1


@dataclass
class LossBreakdown:
    loss_loc: torch.Tensor
    loss_fus: torch.Tensor
    total: torch.Tensor
    alpha: float

    def as_dict(self) -> dict[str, float]:
        return {
            "loss_loc": float(self.loss_loc.detach()),
            "loss_fus": float(self.loss_fus.detach()),
            "total": float(self.total.detach()),
            "alpha": self.alpha,
        }


def _true_class_nll(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    p = probs.gather(1, labels.long().view(-1, 1)).squeeze(1)
    if bool((p < PROB_FLOOR).any()):
        log.warning("true-class probability below %.0e clamped", PROB_FLOOR)
    return -torch.log(p.clamp_min(PROB_FLOOR))


def loss_loc(y_loc_rgb: torch.Tensor, y_loc_sobel: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cross-entropy summed over the two modalities, averaged over the batch."""
    return (_true_class_nll(y_loc_rgb, labels) + _true_class_nll(y_loc_sobel, labels)).mean()


def loss_fus(y_fus: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return _true_class_nll(y_fus, labels).mean()


def total_loss(loc: torch.Tensor, fus: torch.Tensor, alpha: float = DEFAULT_ALPHA) -> LossBreakdown:
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    return LossBreakdown(loss_loc=loc, loss_fus=fus, total=loc + alpha * fus, alpha=alpha)


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_index: int
    n_checked: int


def grad_check(scalar_fn: Callable[[torch.Tensor], torch.Tensor], params: torch.Tensor,
               eps: float = 1e-6, n_samples: int | None = None, seed: int = 0) -> GradCheckResult:
    """Compare autograd gradients of ``scalar_fn`` with central differences.

    ``params`` is a flat float64 vector. ``n_samples`` coordinates are drawn
    without replacement (all of them when None). The error per coordinate is
    ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    p = params.detach().clone().to(torch.float64).requires_grad_(True)
    value = scalar_fn(p)
    if not torch.isfinite(value):
        raise NumericError("scalar function is non-finite at the base point")
    (analytic,) = torch.autograd.grad(value, p)
    analytic = analytic.detach().numpy()

    n = p.numel()
    if n_samples is None or n_samples >= n:
        coords = np.arange(n)
    else:
        coords = np.sort(np.random.default_rng(seed).choice(n, size=n_samples, replace=False))

    base = p.detach().clone()
    worst, worst_i = 0.0, -1
    with torch.no_grad():
        for i in coords:
            plus, minus = base.clone(), base.clone()
            plus[i] += eps
            minus[i] -= eps
            f_plus, f_minus = float(scalar_fn(plus)), float(scalar_fn(minus))
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite value when perturbing coordinate {i}")
            numeric = (f_plus - f_minus) / (2 * eps)
            err = abs(analytic[i] - numeric) / max(1e-8, abs(analytic[i]) + abs(numeric))
            if err > worst:
                worst, worst_i = err, int(i)
    return GradCheckResult(max_rel_error=float(worst), worst_index=worst_i, n_checked=len(coords))
