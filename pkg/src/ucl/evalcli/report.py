"""Uncertainty-accuracy curves and rank correlation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..exceptions import InputError



class DegenerateUncertaintyError(InputError):
    """Raised when uncertainties take fewer than two distinct values."""


def minmax_normalize(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if u.size == 0 or not np.all(np.isfinite(u)):
        raise InputError("uncertainties must be a non-empty finite vector")
    lo, hi = u.min(), u.max()
    if not hi > lo:
        raise DegenerateUncertaintyError(
            f"cannot min-max normalize: all {u.size} uncertainties equal {float(lo)!r}"
        )
    return (u - lo) / (hi - lo)


def spearman(a, b) -> float:
    """Spearman rank correlation; 0.0 when either input is constant."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape or a.size < 2:
        raise InputError("spearman needs two vectors of equal length >= 2")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    return float(stats.spearmanr(a, b).statistic)


@dataclass
class CurveTable:
    """Per-bin outcome over normalized uncertainty.

    ``value`` is accuracy (or mean squared error for regression) and is
    ``nan`` for an empty bin; ``present`` marks which bins have data.
    """

    edges: np.ndarray
    counts: np.ndarray
    values: np.ndarray
    value_name: str
    spearman: float

    @property
    def present(self) -> np.ndarray:
        return self.counts > 0

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    def gap(self) -> float:
        """Outcome in the first non-empty bin minus the last non-empty bin."""
        vals = self.values[self.present]
        return float(vals[0] - vals[-1])

    def rows(self) -> list[dict]:
        out = []
        for i in range(self.n_bins):
            v = self.values[i]
            out.append({
                "bin": i,
                "lo": float(self.edges[i]),
                "hi": float(self.edges[i + 1]),
                "count": int(self.counts[i]),
                "value": None if math.isnan(v) else float(v),
            })
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin", "lo", "hi", "count", self.value_name])
        for r in self.rows():
            w.writerow([r["bin"], repr(r["lo"]), repr(r["hi"]), r["count"], "" if r["value"] is None else repr(r["value"])])
        return buf.getvalue()


def uncertainty_accuracy_curve(outcome, uncertainty, bins: int = 10, value_name: str = "accuracy") -> CurveTable:
    """Bin min-max normalized uncertainty into equal-width bins.

    ``outcome`` is a per-example correctness indicator (or squared error).
    The last bin is closed so the maximum lands in it. ``spearman`` is the
    rank correlation between normalized uncertainty and ``outcome``.
    """
    if bins < 1:
        raise InputError("bins must be >= 1")
    y = np.asarray(outcome, dtype=np.float64).reshape(-1)
    z = minmax_normalize(uncertainty)
    if y.shape != z.shape:
        raise InputError(f"outcome has {y.size} entries but uncertainty has {z.size}")
    edges = np.arange(bins + 1) / bins
    idx = np.minimum((z * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    sums = np.bincount(idx, weights=y, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return CurveTable(edges, counts, values, value_name, spearman(z, y))


def decile_gap(correct, uncertainty) -> float:
    """Accuracy of the 10% least uncertain minus the 10% most uncertain examples."""
    c = np.asarray(correct, dtype=np.float64).reshape(-1)
    u = np.asarray(uncertainty, dtype=np.float64).reshape(-1)
    order = np.argsort(u, kind="stable")
    k = max(1, len(u) // 10)
    return float(c[order[:k]].mean() - c[order[-k:]].mean())
