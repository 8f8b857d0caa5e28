"""Flat ``key = value`` experiment configuration.

Keys live under four namespaces; unknown keys are errors::

    task.kind            cls | reg | multichoice            (cls)
    task.n_classes       classes for cls                    (4)
    task.n_options       options for multichoice            (4)
    task.n_train / task.n_val / task.n_test                 (2000 / 500 / 2000)
    task.context_len / task.query_len / task.feature_dim    (8 / 4 / 16)
    task.noise_levels    comma list in [0, 1]               (0,0.25,0.5,0.75)
    task.jitter_scale / task.query_signal / task.target_noise_scale
    task.seed                                               (0)
    train.epochs / train.batch_size / train.learning_rate   (20 / 32 / 1e-4)
    train.k_train / train.k_test / train.alpha              (5 / 10 / 1e-4)
    train.prob_context / train.prob_query                   (true / true)
    train.hidden_dim / train.latent_dim                     (32 / 16)
    train.bn_momentum / train.bn_eps                        (0.1 / 1e-12)
    train.seed                                              (0)
    curriculum.mode      none | ucl_feature | ucl_predictive | spl_hard | spl_linear
    curriculum.s1 / curriculum.s2                           (3 / 7)
    curriculum.spl_s1 / curriculum.spl_s2                   (1.5 / 3)
    report.bins          uncertainty-accuracy bins          (10)
    report.uncertainty   predictive | feature               (predictive)
    report.name          run directory name                 (config digest)
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..exceptions import ConfigurationError
from ..synthtasks import TaskConfig
from ..trainer import TrainConfig

# config key -> (section, dataclass field)
TASK_KEYS = {
    "task.kind": "task",
    "task.n_classes": "n_classes",
    "task.n_options": "n_options",
    "task.n_train": "n_train",
    "task.n_val": "n_val",
    "task.n_test": "n_test",
    "task.context_len": "context_len",
    "task.query_len": "query_len",
    "task.feature_dim": "feature_dim",
    "task.noise_levels": "noise_levels",
    "task.jitter_scale": "jitter_scale",
    "task.query_signal": "query_signal",
    "task.target_noise_scale": "target_noise_scale",
    "task.seed": "seed",
}
TRAIN_KEYS = {
    "train.epochs": "epochs",
    "train.batch_size": "batch_size",
    "train.learning_rate": "learning_rate",
    "train.k_train": "k_train",
    "train.k_test": "k_test",
    "train.alpha": "alpha",
    "train.prob_context": "prob_context",
    "train.prob_query": "prob_query",
    "train.hidden_dim": "hidden_dim",
    "train.latent_dim": "latent_dim",
    "train.bn_momentum": "momentum",
    "train.bn_eps": "bn_eps",
    "train.seed": "seed",
    "curriculum.mode": "cl_mode",
    "curriculum.s1": "s1",
    "curriculum.s2": "s2",
    "curriculum.spl_s1": "spl_s1",
    "curriculum.spl_s2": "spl_s2",
}
REPORT_KEYS = {"report.bins": "bins", "report.uncertainty": "uncertainty", "report.name": "name"}
ALL_KEYS = {**TASK_KEYS, **TRAIN_KEYS, **REPORT_KEYS}


@dataclass(frozen=True)
class ReportConfig:
    bins: int = 10
    uncertainty: str = "predictive"
    name: str = ""

    def __post_init__(self):
        if self.bins < 1:
            raise ConfigurationError("report.bins must be >= 1", key="bins")
        if self.uncertainty not in ("predictive", "feature"):
            raise ConfigurationError("report.uncertainty must be predictive or feature", key="uncertainty")


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def to_flat(self) -> dict:
        out = {}
        for table, obj in ((TASK_KEYS, self.task), (TRAIN_KEYS, self.train), (REPORT_KEYS, self.report)):
            for key, attr in table.items():
                value = getattr(obj, attr)
                out[key] = list(value) if isinstance(value, tuple) else value
        return out

    def digest(self) -> str:
        flat = self.to_flat()
        flat.pop("report.name")
        blob = json.dumps(flat, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        flat = self.to_flat()
        for key, value in overrides.items():
            if key not in ALL_KEYS:
                raise ConfigurationError(f"unknown config key {key!r}", key=key)
            flat[key] = value
        return from_flat(flat)


def _parse_bool(key, raw):
    v = str(raw).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"{key}: expected a boolean, got {raw!r}", key=key)


def _coerce(key, raw, default):
    if isinstance(raw, type(default)) and not isinstance(default, tuple):
        return raw
    try:
        if isinstance(default, bool):
            return _parse_bool(key, raw)
        if isinstance(default, int):
            f = float(raw)
            if not f.is_integer():
                raise ValueError
            return int(f)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if isinstance(raw, (list, tuple)):
                return tuple(float(v) for v in raw)
            return tuple(float(v) for v in str(raw).split(",") if v.strip())
        return str(raw).strip()
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r}", key=key) from None


def _build(cls, table, flat, prefix_map):
    defaults = cls()
    kwargs = {}
    for key, attr in table.items():
        if key in flat:
            kwargs[attr] = _coerce(key, flat[key], getattr(defaults, attr))
    try:
        return cls(**kwargs)
    except ConfigurationError as exc:
        full = prefix_map.get(exc.key, exc.key)
        raise ConfigurationError(f"{full}: {exc}", key=full) from None


def from_flat(flat: dict) -> ExperimentConfig:
    for key in flat:
        if key not in ALL_KEYS:
            raise ConfigurationError(f"unknown config key {key!r}", key=key)
    inv = lambda table: {attr: key for key, attr in table.items()}  # noqa: E731
    return ExperimentConfig(
        _build(TaskConfig, TASK_KEYS, flat, inv(TASK_KEYS)),
        _build(TrainConfig, TRAIN_KEYS, flat, inv(TRAIN_KEYS)),
        _build(ReportConfig, REPORT_KEYS, flat, inv(REPORT_KEYS)),
    )


def parse_text(text: str, source: str = "<config>") -> dict:
    flat = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {line!r}", key=line)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in ALL_KEYS:
            raise ConfigurationError(f"{source}:{lineno}: unknown config key {key!r}", key=key)
        if key in flat:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}", key=key)
        flat[key] = value
    return flat


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value", key=item)
        key, value = (part.strip() for part in item.split("=", 1))
        out[key] = value
    return out


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}", key=str(path)) from None
    flat = parse_text(text, str(path))
    for key, value in (overrides or {}).items():
        if key not in ALL_KEYS:
            raise ConfigurationError(f"unknown config key {key!r}", key=key)
        flat[key] = value
    return from_flat(flat)


def dump_config(config: ExperimentConfig) -> str:
    lines = []
    for key, value in config.to_flat().items():
        if isinstance(value, list):
            value = ",".join(repr(float(v)) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def replace_train(config: ExperimentConfig, **changes) -> ExperimentConfig:
    return dataclasses.replace(config, train=dataclasses.replace(config.train, **changes))
