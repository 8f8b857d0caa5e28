"""Uncertainty-aware curriculum learning for probabilistic question answering models."""

__version__ = "0.1.0"

from .estimator import UCLClassifier, UCLRegressor  # noqa: E402
from .exceptions import ConfigurationError, InputError, NumericalError, UCLError, UsageError  # noqa: E402
from .synthtasks import TaskConfig, generate  # noqa: E402
from .trainer import TrainConfig, evaluate, train  # noqa: E402

__all__ = [
    "UCLClassifier",
    "UCLRegressor",
    "ConfigurationError",
    "InputError",
    "NumericalError",
    "UCLError",
    "UsageError",
    "TaskConfig",
    "TrainConfig",
    "generate",
    "train",
    "evaluate",
]
