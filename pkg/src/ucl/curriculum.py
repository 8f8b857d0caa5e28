"""Curriculum schedules and per-sample weights.

Three weighting rules share one linear temperature/threshold schedule:

* UCL: ``w = 1 - sigmoid(u / lambda(e))`` on batch-normalized uncertainty,
* hard self-paced learning: ``w = 1[loss < lambda(e)]``,
* self-paced learning with a linear regularizer: ``w = max(0, 1 - loss / lambda(e))``.

Weights are plain floats. Multiplying a tape value by them therefore never
routes gradient into whatever produced them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .exceptions import ConfigurationError, InputError, UsageError

CL_MODES = ("none", "ucl_feature", "ucl_predictive", "spl_hard", "spl_linear")


@dataclass(frozen=True)
class Scheduler:
    """Linear schedule from ``s1`` at epoch 0 to ``s2`` at epoch ``epochs - 1``."""

    s1: float = 3.0
    s2: float = 7.0
    epochs: int = 20

    def __post_init__(self):
        if not self.s1 > 0:
            raise ConfigurationError(f"scheduler needs s1 > 0, got s1={self.s1}", key="s1")
        if not self.s1 < self.s2:
            raise ConfigurationError(
                f"scheduler needs s1 < s2, got s1={self.s1}, s2={self.s2}", key="s2"
            )
        if self.epochs < 2:
            raise ConfigurationError("scheduler needs at least 2 epochs", key="epochs")

    def __call__(self, e: int) -> float:
        return lambda_at(self, e)


def lambda_at(s: Scheduler, e: int) -> float:
    if not 0 <= e <= s.epochs - 1:
        raise UsageError(f"epoch {e} outside [0, {s.epochs - 1}]")
    if e == s.epochs - 1:
        return float(s.s2)
    return (s.s2 - s.s1) / (s.epochs - 1) * e + s.s1


@dataclass(frozen=True)
class SampleWeight:
    value: float
    detached: bool = True

    def __float__(self):
        return self.value


def _check_lambda(lam):
    if not np.all(np.asarray(lam) > 0):
        raise ConfigurationError(f"lambda must be positive, got {lam}")


def ucl_weight_values(normalized_u, lam: float) -> np.ndarray:
    """Vectorized ``1 - sigmoid(u / lam)``; returns a detached float array."""
    _check_lambda(lam)
    x = np.asarray(normalized_u, dtype=np.float64) / lam
    # 1 - sigmoid(x) == sigmoid(-x)
    return gc._sigmoid(-x)


def ucl_weight(normalized_u: float, lam: float) -> SampleWeight:
    return SampleWeight(float(ucl_weight_values(normalized_u, lam)), detached=True)


def spl_hard_weight(loss, lam):
    """1 where ``loss < lam`` else 0 (the boundary belongs to the zero branch)."""
    loss = np.asarray(loss, dtype=np.float64)
    if not np.all(np.isfinite(loss)):
        raise InputError("loss must be finite")
    w = (loss < lam).astype(np.float64)
    return float(w) if w.ndim == 0 else w


def spl_linear_weight(loss, lam):
    _check_lambda(lam)
    loss = np.asarray(loss, dtype=np.float64)
    if np.any(loss < 0):
        raise InputError("loss must be non-negative")
    w = np.maximum(0.0, 1.0 - loss / lam)
    return float(w) if w.ndim == 0 else w


def weight_values(weights) -> np.ndarray:
    return np.array([float(w) for w in weights], dtype=np.float64)


def apply_weights(per_sample_losses, weights):
    """``(1/B) * sum_b w_b * l_b`` with every ``w_b`` held constant.

    ``per_sample_losses`` may be a tape :class:`~ucl.gradcore.Var` of shape
    (B,) or a plain array; ``weights`` are numbers or :class:`SampleWeight`.
    """
    w = weight_values(np.ravel(weights) if isinstance(weights, np.ndarray) else weights)
    n = per_sample_losses.shape[0] if hasattr(per_sample_losses, "shape") else len(per_sample_losses)
    if w.shape[0] != n:
        raise InputError(f"{n} losses but {w.shape[0]} weights")
    if isinstance(per_sample_losses, gc.Var):
        return gc.mean(gc.mul(per_sample_losses, w))
    return float(np.mean(np.asarray(per_sample_losses, dtype=np.float64) * w))
