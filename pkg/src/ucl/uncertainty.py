"""Feature/predictive uncertainty and their batch normalization.

All functions here work on plain numbers: uncertainty only ever feeds the
detached curriculum weights, so it never needs to be on a gradient tape.
Functions accept a single example (leading axis K) or a batch (K, B, ...).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, InputError

KINDS = ("feature", "predictive")


@dataclass
class UncertaintyRecord:
    raw: float
    normalized: float
    kind: str


def feature_uncertainty_cls(logit_sets) -> np.ndarray | float:
    """Logit dispersion over the K draws.

    ``(1 / (C K)) * || sum_k (g_k - g_bar)^2 ||_1`` with the square taken
    elementwise. ``logit_sets`` is (K, C) or (K, B, C); K = 1 gives 0.
    """
    g = _as_stack(logit_sets, min_ndim=2)
    K, C = g.shape[0], g.shape[-1]
    g = g - g[:1]  # shift-invariant; makes coinciding draws exactly 0
    dev = g - g.mean(axis=0, keepdims=True)
    u = np.abs((dev**2).sum(axis=0)).sum(axis=-1) / (C * K)
    return _scalar(u)


def feature_uncertainty_reg(mu_set) -> np.ndarray | float:
    """Population variance of the K predicted means; K = 1 gives 0."""
    mu = _as_stack(mu_set, min_ndim=1)
    mu = mu - mu[:1]
    return _scalar(((mu - mu.mean(axis=0, keepdims=True)) ** 2).mean(axis=0))


def predictive_uncertainty_cls(averaged_probs) -> np.ndarray | float:
    """Entropy (nats) of the averaged class distribution, with 0 log 0 = 0."""
    p = np.asarray(averaged_probs, dtype=np.float64)
    if np.any(p < 0):
        raise InputError("probabilities must be non-negative")
    safe = np.where(p > 0, p, 1.0)
    h = -(p * np.log(safe)).sum(axis=-1)
    return _scalar(np.maximum(h, 0.0))


def predictive_uncertainty_reg(var_set) -> np.ndarray | float:
    """Mean of the K predicted variances."""
    var = _as_stack(var_set, min_ndim=1)
    if np.any(var <= 0):
        raise InputError("predicted variances must be positive")
    return _scalar(var.mean(axis=0))


def _as_stack(x, min_ndim):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < min_ndim or arr.shape[0] == 0:
        raise InputError(f"expected a stack of K >= 1 samples, got shape {arr.shape}")
    return arr


def _scalar(u):
    return float(u) if np.ndim(u) == 0 else u


class RunningNormalizer:
    """Batch normalization of a scalar per-example score.

    In ``train`` mode a batch is standardized with its own mean and
    population variance, and the running estimates are updated with
    ``momentum``. In ``eval`` mode the running estimates are used and never modified.
    """

    def __init__(self, momentum: float = 0.1, eps: float = 1e-12):
        if not 0 < momentum <= 1:
            raise ConfigurationError("momentum must lie in (0, 1]")
        if eps <= 0:
            raise ConfigurationError("eps must be positive")
        self.momentum = momentum
        self.eps = eps
        self.running_mean = 0.0
        self.running_var = 1.0
        self.mode = "train"
        self.n_updates = 0

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def state(self) -> tuple:
        return (self.running_mean, self.running_var, self.momentum, self.eps, self.n_updates)

    def copy(self) -> "RunningNormalizer":
        return copy.deepcopy(self)

    def __call__(self, raw):
        return normalize_batch(raw, self)

    def __repr__(self):
        return (
            f"RunningNormalizer(mean={self.running_mean:.4g}, var={self.running_var:.4g}, "
            f"mode={self.mode!r})"
        )


def normalize_batch(raw, norm: RunningNormalizer) -> np.ndarray:
    """Standardize a batch of B raw uncertainties (see :class:`RunningNormalizer`)."""
    u = np.asarray(raw, dtype=np.float64).reshape(-1)
    if norm.mode == "eval":
        if u.size < 1:
            raise InputError("empty uncertainty batch")
        return (u - norm.running_mean) / np.sqrt(norm.running_var + norm.eps)
    if u.size < 2:
        raise ConfigurationError("train-mode normalization needs a batch of at least 2")
    mean = u.mean()
    dev = u - mean
    # second centering pass: removes the rounding error of the first mean,
    # which a small eps would otherwise amplify on near-constant batches
    shift = dev.mean()
    dev -= shift
    mean += shift
    var = np.mean(dev**2)
    m = norm.momentum
    norm.running_mean = (1 - m) * norm.running_mean + m * mean
    norm.running_var = (1 - m) * norm.running_var + m * var
    norm.n_updates += 1
    return dev / np.sqrt(var + norm.eps)
