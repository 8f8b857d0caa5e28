"""Synthetic (context, query) -> answer tasks with known per-example difficulty.

Every example draws a noise level ``nu`` from ``TaskConfig.noise_levels`` and
the generator corrupts it by exactly that amount, so ``nu`` is a ground-truth
difficulty score:

* context steps are ``(1 - nu) * u + nu * jitter_scale * eps_t`` for the clean
  context latent ``u``: the signal fades while Gaussian jitter grows;
* cls: latents are drawn around per-class prototypes (query prototypes scaled
  by ``query_signal``); the label of the linear Bayes rule on the clean
  latents is redrawn uniformly over all classes with probability ``0.5 * nu``;
* reg: the target ``tanh(2 a.u) + b.v`` gets Gaussian noise with std
  ``nu * target_noise_scale``;
* multichoice: distractor query latents are mixed towards the correct one
  with cosine ``0.99 * nu``.

Record file layout (one JSON object per line)::

    {"format": "ucl-synth/1", "split": ..., "task": ..., "config_digest": ...,
     "n": N, "context_shape": [T, F], "query_shape": [J, F] or [O, J, F]}
    {"context": [T*F floats, row-major], "query": [...], "target": ...,
     "noise_level": ..., "clean_target": ...}
    ...
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .exceptions import ConfigurationError, InputError

TASKS = ("cls", "reg", "multichoice")
FORMAT = "ucl-synth/1"
RECORD_FIELDS = ("context", "query", "target", "noise_level", "clean_target")


@dataclass(frozen=True)
class TaskConfig:
    task: str = "cls"
    n_classes: int = 4
    n_options: int = 4
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 2000
    context_len: int = 8
    query_len: int = 4
    feature_dim: int = 16
    noise_levels: tuple = (0.0, 0.25, 0.5, 0.75)
    jitter_scale: float = 0.5
    query_signal: float = 0.3
    target_noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "noise_levels", tuple(float(v) for v in self.noise_levels))
        problems = []
        if self.task not in TASKS:
            problems.append(("task", f"task must be one of {TASKS}"))
        if min(self.n_train, self.n_val, self.n_test) < 1:
            problems.append(("n_train", "split sizes must be >= 1"))
        if min(self.context_len, self.query_len, self.feature_dim) < 1:
            problems.append(("feature_dim", "sequence lengths and feature_dim must be >= 1"))
        if self.task == "cls" and self.n_classes < 2:
            problems.append(("n_classes", "cls needs n_classes >= 2"))
        if self.task == "multichoice" and self.n_options < 2:
            problems.append(("n_options", "multichoice needs n_options >= 2"))
        if not self.noise_levels or any(not 0.0 <= v <= 1.0 for v in self.noise_levels):
            problems.append(("noise_levels", "noise levels must be a non-empty list in [0, 1]"))
        if self.jitter_scale < 0 or self.target_noise_scale < 0:
            problems.append(("jitter_scale", "noise scales must be non-negative"))
        if problems:
            key, msg = problems[0]
            raise ConfigurationError(msg, key=key)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["noise_levels"] = list(self.noise_levels)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class SynthExample:
    context: np.ndarray  # (T, F)
    query: np.ndarray  # (J, F), or (O, J, F) for multichoice
    target: int | float
    noise_level: float
    clean_target: int | float | None = None


@dataclass
class SynthDataset:
    """Column-oriented examples of one split; immutable by convention."""

    task: str
    context: np.ndarray
    query: np.ndarray
    target: np.ndarray
    noise_level: np.ndarray
    clean_target: np.ndarray
    n_classes: int = 0

    def __len__(self):
        return self.target.shape[0]

    def __getitem__(self, i) -> SynthExample:
        t = self.target[i]
        ct = self.clean_target[i]
        cast = float if self.task == "reg" else int
        return SynthExample(self.context[i], self.query[i], cast(t), float(self.noise_level[i]), cast(ct))

    def __iter__(self) -> Iterator[SynthExample]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "SynthDataset":
        idx = np.asarray(idx)
        return SynthDataset(
            self.task, self.context[idx], self.query[idx], self.target[idx],
            self.noise_level[idx], self.clean_target[idx], self.n_classes,
        )

    @property
    def feature_dim(self) -> int:
        return self.context.shape[-1]

    @property
    def n_options(self) -> int:
        return self.query.shape[1] if self.task == "multichoice" else 0

    def as_pairs(self) -> "SynthDataset":
        """Flatten multichoice examples into binary (context, option) examples."""
        if self.task != "multichoice":
            return self
        n, o = self.query.shape[:2]
        rows = np.repeat(np.arange(n), o)
        opts = np.tile(np.arange(o), n)
        labels = (opts == self.target[rows]).astype(np.int64)
        clean = (opts == self.clean_target[rows]).astype(np.int64)
        return SynthDataset(
            "cls", self.context[rows], self.query[rows, opts], labels,
            self.noise_level[rows], clean, 2,
        )


@dataclass
class SynthSplits:
    config: TaskConfig
    train: SynthDataset
    val: SynthDataset
    test: SynthDataset
    rule: dict = field(default_factory=dict, repr=False)

    def items(self):
        return (("train", self.train), ("val", self.val), ("test", self.test))


def _draw_noise(config, rng, n):
    levels = np.asarray(config.noise_levels)
    return levels[rng.integers(0, len(levels), size=n)]


def _context_seq(config, rng, u, nu):
    n = u.shape[0]
    eps = rng.standard_normal((n, config.context_len, config.feature_dim))
    a = (1.0 - nu)[:, None, None]
    s = (nu * config.jitter_scale)[:, None, None]
    return a * u[:, None, :] + s * eps


def _repeat_seq(v, length):
    return np.repeat(v[..., None, :], length, axis=-2).copy()


def _check_task(config, task):
    if config.task != task:
        raise ConfigurationError(f"config is for task {config.task!r}, not {task!r}", key="task")


def _split_sizes(config):
    return (("train", config.n_train), ("val", config.n_val), ("test", config.n_test))


def cls_rule(config: TaskConfig, rng) -> dict:
    F, C = config.feature_dim, config.n_classes
    return {
        "pc": rng.standard_normal((C, F)),
        "pq": config.query_signal * rng.standard_normal((C, F)),
    }


def cls_clean_label(rule, u, v):
    """Bayes rule of the equal-prior Gaussian mixture; linear in (u, v)."""
    pc, pq = rule["pc"], rule["pq"]
    score = u @ pc.T - 0.5 * (pc**2).sum(axis=1) + v @ pq.T - 0.5 * (pq**2).sum(axis=1)
    return np.argmax(score, axis=-1)


def gen_cls(config: TaskConfig, seed: int | None = None) -> SynthSplits:
    """Classification splits; the rule is shared by all splits.

    Clean latents are ``u = pc[c] + N(0, I)`` and ``v = pq[c] + N(0, I)`` for a
    uniformly drawn class ``c``; the clean label is the Bayes rule on (u, v).
    """
    _check_task(config, "cls")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    rule = cls_rule(config, rng)
    C, F = config.n_classes, config.feature_dim
    out = {}
    for name, n in _split_sizes(config):
        c = rng.integers(0, C, size=n)
        u = rule["pc"][c] + rng.standard_normal((n, F))
        v = rule["pq"][c] + rng.standard_normal((n, F))
        nu = _draw_noise(config, rng, n)
        ctx = _context_seq(config, rng, u, nu)
        clean = cls_clean_label(rule, u, v)
        redraw = rng.random(n) < 0.5 * nu
        label = np.where(redraw, rng.integers(0, C, size=n), clean)
        out[name] = SynthDataset(
            "cls", ctx, _repeat_seq(v, config.query_len), label.astype(np.int64),
            nu, clean.astype(np.int64), C,
        )
    return SynthSplits(config, out["train"], out["val"], out["test"], rule)


def reg_rule(config: TaskConfig, rng) -> dict:
    F = config.feature_dim
    return {
        "a": rng.standard_normal(F) / np.sqrt(F),
        "b": config.query_signal * rng.standard_normal(F) / np.sqrt(F),
    }


def reg_clean_target(rule, u, v):
    return np.tanh(2.0 * u @ rule["a"]) + v @ rule["b"]


def gen_reg(config: TaskConfig, seed: int | None = None) -> SynthSplits:
    _check_task(config, "reg")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    rule = reg_rule(config, rng)
    out = {}
    for name, n in _split_sizes(config):
        u = rng.standard_normal((n, config.feature_dim))
        v = rng.standard_normal((n, config.feature_dim))
        nu = _draw_noise(config, rng, n)
        ctx = _context_seq(config, rng, u, nu)
        clean = reg_clean_target(rule, u, v)
        target = clean + nu * config.target_noise_scale * rng.standard_normal(n)
        out[name] = SynthDataset("reg", ctx, _repeat_seq(v, config.query_len), target, nu, clean)
    return SynthSplits(config, out["train"], out["val"], out["test"], rule)


def mc_rule(config: TaskConfig, rng) -> dict:
    F = config.feature_dim
    return {"A": rng.standard_normal((F, F)) / np.sqrt(F)}


def mc_scores(rule, u, options):
    """Cosine between each option latent and ``A u``; options (n, O, F)."""
    key = u @ rule["A"].T
    key = key / np.linalg.norm(key, axis=-1, keepdims=True)
    opt = options / np.linalg.norm(options, axis=-1, keepdims=True)
    return np.einsum("nof,nf->no", opt, key)


def gen_multichoice(config: TaskConfig, seed: int | None = None) -> SynthSplits:
    _check_task(config, "multichoice")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    rule = mc_rule(config, rng)
    F, O = config.feature_dim, config.n_options
    out = {}
    for name, n in _split_sizes(config):
        u = rng.standard_normal((n, F))
        nu = _draw_noise(config, rng, n)
        key = u @ rule["A"].T
        correct = key / np.linalg.norm(key, axis=-1, keepdims=True) * np.sqrt(F)
        r = rng.standard_normal((n, O, F))
        c = (0.99 * nu)[:, None, None]
        options = c * correct[:, None, :] + np.sqrt(1.0 - c**2) * r
        answer = rng.integers(0, O, size=n)
        options[np.arange(n), answer] = correct
        ctx = _context_seq(config, rng, u, np.zeros(n))
        out[name] = SynthDataset(
            "multichoice", ctx, _repeat_seq(options, config.query_len),
            answer.astype(np.int64), nu, answer.astype(np.int64), 2,
        )
    return SynthSplits(config, out["train"], out["val"], out["test"], rule)


GENERATORS = {"cls": gen_cls, "reg": gen_reg, "multichoice": gen_multichoice}


def generate(config: TaskConfig, seed: int | None = None) -> SynthSplits:
    return GENERATORS[config.task](config, seed)


# ------------------------------------------------------------------ record files


def _num(x, task):
    return float(x) if task == "reg" else int(x)


def dump_records(dataset: SynthDataset, path, config: TaskConfig, split: str = "train") -> Path:
    path = Path(path)
    header = {
        "format": FORMAT,
        "split": split,
        "task": dataset.task,
        "config_digest": config.digest(),
        "n": len(dataset),
        "n_classes": int(dataset.n_classes),
        "context_shape": list(dataset.context.shape[1:]),
        "query_shape": list(dataset.query.shape[1:]),
    }
    with path.open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for i in range(len(dataset)):
            rec = {
                "context": dataset.context[i].reshape(-1).tolist(),
                "query": dataset.query[i].reshape(-1).tolist(),
                "target": _num(dataset.target[i], dataset.task),
                "noise_level": float(dataset.noise_level[i]),
                "clean_target": _num(dataset.clean_target[i], dataset.task),
            }
            fh.write(json.dumps(rec) + "\n")
    return path


def load_records(path) -> tuple[dict, SynthDataset]:
    path = Path(path)
    with path.open() as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise InputError(f"{path}: empty record file")
    header = json.loads(lines[0])
    if header.get("format") != FORMAT:
        raise InputError(f"{path}: not a {FORMAT} file")
    recs = [json.loads(line) for line in lines[1:]]
    if len(recs) != header["n"]:
        raise InputError(f"{path}: header says {header['n']} records, found {len(recs)}")
    task = header["task"]
    cshape, qshape = tuple(header["context_shape"]), tuple(header["query_shape"])
    ctx = np.array([r["context"] for r in recs], dtype=np.float64).reshape((-1,) + cshape)
    qry = np.array([r["query"] for r in recs], dtype=np.float64).reshape((-1,) + qshape)
    dtype = np.float64 if task == "reg" else np.int64
    tgt = np.array([r["target"] for r in recs], dtype=dtype)
    clean = np.array([r["clean_target"] for r in recs], dtype=dtype)
    nu = np.array([r["noise_level"] for r in recs], dtype=np.float64)
    return header, SynthDataset(task, ctx, qry, tgt, nu, clean, int(header.get("n_classes", 0)))


def export_splits(splits: SynthSplits, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [dump_records(ds, out_dir / f"{name}.jsonl", splits.config, name) for name, ds in splits.items()]
