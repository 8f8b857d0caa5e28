"""Experiment runner for single runs and ablation matrices."""

from .ablation import AblationResult, ablation_matrix, grid, parse_axis
from .config import ExperimentConfig, ReportConfig, from_flat, load_config, parse_text
from .report import CurveTable, DegenerateUncertaintyError, decile_gap, minmax_normalize, spearman, uncertainty_accuracy_curve
from .runner import RunResult, execute, run_experiment

__all__ = [
    "AblationResult", "ablation_matrix", "grid", "parse_axis",
    "ExperimentConfig", "ReportConfig", "from_flat", "load_config", "parse_text",
    "CurveTable", "DegenerateUncertaintyError", "decile_gap", "minmax_normalize", "spearman",
    "uncertainty_accuracy_curve", "RunResult", "execute", "run_experiment",
]
