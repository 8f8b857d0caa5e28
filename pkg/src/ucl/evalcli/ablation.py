"""Ablation matrices: every cell of an axis grid, over several seeds."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..exceptions import ConfigurationError
from .config import ALL_KEYS, ExperimentConfig, from_flat
from .runner import EXIT_OK, execute, output_root

logger = logging.getLogger(__name__)

RUN_COLUMNS = ("cell", "seed", "status", "metric_name", "test_metric", "test_clean_metric", "spearman_uncertainty_noise")
STAT_COLUMNS = ("metric_name", "n_seeds", "n_ok", "n_failed", "mean", "std", "delta_vs_base", "clean_mean", "clean_std")


def parse_axis(text: str) -> tuple[str, list[str]]:
    """``key=v1,v2,...`` into ``(key, [v1, v2, ...])``."""
    if "=" not in text:
        raise ConfigurationError(f"axis {text!r} is not key=v1,v2,...", key=text)
    key, values = (part.strip() for part in text.split("=", 1))
    if key not in ALL_KEYS:
        raise ConfigurationError(f"unknown axis key {key!r}", key=key)
    if key in ("task.seed", "train.seed"):
        raise ConfigurationError("seeds are given with --seeds, not as an axis", key=key)
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not vals:
        raise ConfigurationError(f"axis {key!r} has no values", key=key)
    return key, vals


@dataclass
class Cell:
    name: str
    overrides: dict


def grid(axes: dict[str, list]) -> list[Cell]:
    """Cartesian product of the axes; the first value of each axis forms the base cell."""
    keys = list(axes)
    cells = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        ov = dict(zip(keys, combo))
        name = ",".join(f"{k}={v}" for k, v in ov.items()) or "base"
        cells.append(Cell(name, ov))
    return cells


def _run_one(flat: dict, run_dir: str) -> dict:
    try:
        res = execute(from_flat(flat), run_dir)
    except Exception as exc:  # any failure is recorded for its cell; the matrix continues
        return {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    out = dict(res.summary)
    if res.exit_code != EXIT_OK:
        out["status"] = "aborted"
    return out


@dataclass
class AblationResult:
    axes: dict
    seeds: list
    cells: list
    runs: dict  # (cell name, seed) -> summary dict
    rows: list  # aggregate rows, one per cell

    def table_csv(self) -> str:
        return _csv(["cell", *self.axes, *STAT_COLUMNS], self.rows)

    def runs_csv(self) -> str:
        rows = []
        for cell in self.cells:
            for seed in self.seeds:
                s = self.runs[(cell.name, seed)]
                rows.append({"cell": cell.name, "seed": seed, **cell.overrides, **{k: s.get(k) for k in RUN_COLUMNS[2:]}})
        return _csv(["cell", *self.axes, *RUN_COLUMNS[1:]], rows)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _stats(values):
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def aggregate(cells, seeds, runs, axes) -> list[dict]:
    rows = []
    for cell in cells:
        summaries = [runs[(cell.name, s)] for s in seeds]
        ok = [s for s in summaries if s.get("status") == "ok" and s.get("test_metric") is not None]
        mean, std = _stats([s["test_metric"] for s in ok])
        clean = [s["test_clean_metric"] for s in ok if s.get("test_clean_metric") is not None]
        cmean, cstd = _stats(clean)
        rows.append({
            "cell": cell.name, **cell.overrides,
            "metric_name": ok[0]["metric_name"] if ok else None,
            "n_seeds": len(seeds), "n_ok": len(ok), "n_failed": len(seeds) - len(ok),
            "mean": mean, "std": std, "clean_mean": cmean, "clean_std": cstd,
        })
    base = rows[0]["mean"] if rows else None
    for r in rows:
        r["delta_vs_base"] = None if base is None or r["mean"] is None else r["mean"] - base
    return rows


def ablation_matrix(
    base: ExperimentConfig, axes: dict[str, list], seeds=(0,), jobs: int = 1, out_dir=None,
) -> AblationResult:
    """Run every (cell, seed) pair and consolidate the results.

    Seed ``s`` sets both the task and the training seed. Each run owns
    ``<out_dir>/<cell index>/seed<s>``; consolidation happens after all runs.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigurationError("at least one seed is required", key="seeds")
    if jobs < 1:
        raise ConfigurationError("jobs must be >= 1", key="jobs")
    out_dir = Path(out_dir) if out_dir is not None else output_root() / f"ablate-{base.digest()}"
    cells = grid(axes)
    tasks, runs = [], {}
    for ci, cell in enumerate(cells):
        for seed in seeds:
            ov = {**cell.overrides, "task.seed": seed, "train.seed": seed}
            try:
                flat = base.with_overrides(ov).to_flat()
            except ConfigurationError as exc:  # an invalid cell fails alone
                runs[(cell.name, seed)] = {"status": "failed", "error": f"configuration error: {exc}"}
                continue
            tasks.append(((cell.name, seed), flat, str(out_dir / f"cell{ci:02d}" / f"seed{seed}")))
    if jobs == 1:
        results = [_run_one(flat, d) for _, flat, d in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, [t[1] for t in tasks], [t[2] for t in tasks]))
    runs.update({key: res for (key, _, _), res in zip(tasks, results)})
    for key, res in runs.items():
        if res.get("status") != "ok":
            logger.warning("run %s seed %s: %s", key[0], key[1], res.get("error", res.get("status")))
    rows = aggregate(cells, seeds, runs, axes)
    result = AblationResult(dict(axes), seeds, cells, runs, rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "comparison.csv").write_text(result.table_csv())
    (out_dir / "runs.csv").write_text(result.runs_csv())
    (out_dir / "cells.json").write_text(json.dumps(
        [{"cell": c.name, "dir": f"cell{i:02d}", "overrides": c.overrides} for i, c in enumerate(cells)],
        indent=2, sort_keys=True,
    ) + "\n")
    return result
