"""Single experiment runs and their on-disk artifacts."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..exceptions import ConfigurationError, NumericalError
from ..synthtasks import generate
from ..trainer import evaluate, train
from .config import ExperimentConfig, dump_config, load_config
from .report import (
    DegenerateUncertaintyError,
    decile_gap,
    minmax_normalize,
    spearman,
    uncertainty_accuracy_curve,
)

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "UCL_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
TEST_STREAM = 5  # rng stream id for held-out evaluation


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def default_run_dir(config: ExperimentConfig) -> Path:
    return output_root() / (config.report.name or f"run-{config.digest()}")


def version_stamp() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=5,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _finite(x):
    """Floats that are not finite become ``None`` so no NaN ever reaches a report."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


@dataclass
class RunResult:
    exit_code: int
    run_dir: Path
    summary: dict
    files: list = field(default_factory=list)
    message: str = ""


def _write(path: Path, text: str, files: list):
    path.write_text(text)
    files.append(path.name)


def _prediction_lines(result, normalized_curve_u: dict) -> str:
    lines = []
    for i in range(len(result.targets)):
        rec = {
            "index": i,
            "target": result.targets[i].item(),
            "prediction": result.predictions[i].item(),
            "noise_level": float(result.noise_level[i]),
            "u_feature_raw": float(result.raw_feature[i]),
            "u_predictive_raw": float(result.raw_predictive[i]),
            "u_feature_norm": float(result.norm_feature[i]),
            "u_predictive_norm": float(result.norm_predictive[i]),
        }
        if result.correct is not None:
            rec["correct"] = bool(result.correct[i])
        for kind, u in normalized_curve_u.items():
            rec[f"u_{kind}_minmax"] = None if u is None else float(u[i])
        lines.append(_dumps(rec))
    return "\n".join(lines) + "\n"


def _minmax_or_none(u):
    try:
        return minmax_normalize(u)
    except DegenerateUncertaintyError:
        return None


def execute(config: ExperimentConfig, run_dir) -> RunResult:
    """Run one configuration end to end and write its artifacts.

    Numerical failure is reported through the result (exit code 3) rather
    than raised; configuration errors propagate since nothing was run.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    tc = config.train
    base = {
        "config_digest": config.digest(),
        "task": config.task.task,
        "cl_mode": tc.cl_mode,
        "task_seed": config.task.seed,
        "train_seed": tc.seed,
    }
    _write(run_dir / "config.txt", dump_config(config), files)

    metrics_fh = (run_dir / "metrics.jsonl").open("w")
    files.append("metrics.jsonl")

    def on_epoch(m):
        rec = {"type": "epoch", **{k: (_finite(v) if isinstance(v, float) else v) for k, v in m.to_dict().items()}}
        metrics_fh.write(_dumps(rec) + "\n")
        metrics_fh.flush()

    try:
        splits = generate(config.task)
        model, history = train(None, splits, tc, on_epoch=on_epoch)
        result = evaluate(model, splits.test, tc.k_test, np.random.default_rng([tc.seed, TEST_STREAM]))
        if not math.isfinite(result.metric):
            raise NumericalError("non-finite test metric", term="metric")
    except NumericalError as exc:
        summary = {
            **base, "type": "summary", "status": "aborted", "error": str(exc),
            "epoch": exc.epoch, "batch": exc.batch, "term": exc.term,
        }
        metrics_fh.write(_dumps(summary) + "\n")
        metrics_fh.close()
        _write(run_dir / "summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n", files)
        manifest = _manifest(config, run_dir, files)
        return RunResult(EXIT_NUMERICAL, run_dir, summary, manifest["files"], str(exc))

    kind = config.report.uncertainty
    u = result.uncertainty(kind, normalized=True)
    is_reg = result.metric_name == "mse"
    outcome = (result.predictions - result.targets) ** 2 if is_reg else result.correct.astype(np.float64)
    curve_info = {"curve_status": "ok"}
    try:
        curve = uncertainty_accuracy_curve(outcome, u, config.report.bins, "mse" if is_reg else "accuracy")
        _write(run_dir / "curve.csv", curve.to_csv(), files)
        curve_info.update(curve_spearman=_finite(curve.spearman), curve_counts=curve.counts.tolist())
    except DegenerateUncertaintyError as exc:
        curve_info = {"curve_status": f"degenerate: {exc}"}
    last = history[-1]
    summary = {
        **base,
        "type": "summary",
        "status": "ok",
        "metric_name": result.metric_name,
        "test_metric": _finite(result.metric),
        "test_clean_metric": _finite(result.clean_metric),
        "val_metric": _finite(last.val_metric),
        "train_metric": _finite(last.train_metric),
        "final_train_loss": _finite(last.mean_raw_loss),
        "epochs": len(history),
        "n_test": int(len(result.targets)),
        "uncertainty_kind": kind,
        "spearman_uncertainty_noise": _finite(spearman(u, result.noise_level)),
        **curve_info,
    }
    if not is_reg:
        summary["decile_gap"] = _finite(decile_gap(result.correct, u))
    metrics_fh.write(_dumps(summary) + "\n")
    metrics_fh.close()
    _write(run_dir / "summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n", files)
    minmax = {k: _minmax_or_none(result.uncertainty(k, normalized=True)) for k in ("feature", "predictive")}
    _write(run_dir / "predictions.jsonl", _prediction_lines(result, minmax), files)
    manifest = _manifest(config, run_dir, files)
    return RunResult(EXIT_OK, run_dir, summary, manifest["files"])


def _manifest(config, run_dir: Path, files: list) -> dict:
    entries = []
    for name in sorted(files):
        data = (run_dir / name).read_bytes()
        entries.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    manifest = {
        "config_digest": config.digest(),
        "seeds": {"task": config.task.seed, "train": config.train.seed},
        "version": version_stamp(),
        "run_dir": str(run_dir),
        "files": entries + [{"path": "manifest.json"}],
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def run_experiment(config_path, overrides: dict | None = None, run_dir=None) -> RunResult:
    """Run a config file, reporting failure as an exit code instead of raising.

    Exit 2 on configuration problems (the message names the key), 3 on a
    numerical abort, 0 otherwise.
    """
    try:
        config = load_config(config_path, overrides)
    except ConfigurationError as exc:
        return RunResult(EXIT_CONFIG, Path(run_dir or "."), {}, [], f"configuration error: {exc}")
    run_dir = Path(run_dir) if run_dir is not None else default_run_dir(config)
    try:
        return execute(config, run_dir)
    except ConfigurationError as exc:
        return RunResult(EXIT_CONFIG, run_dir, {}, [], f"configuration error: {exc}")
