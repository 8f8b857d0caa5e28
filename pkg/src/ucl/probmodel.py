"""Two-branch probabilistic encoder/decoder model.

The context and query sequences are mean-pooled, mapped by small MLPs to
diagonal Gaussians ``N(mu, exp(log_var))`` and sampled ``K`` times with the
reparameterization trick. Each pair of samples ``(m_k, n_k)`` is decoded
into class logits (``cls``/``multichoice``) or a Gaussian ``(mu_k, var_k)``
(``reg``), and predictions are averaged over the ``K`` draws.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .exceptions import ConfigurationError, InputError
from .uncertainty import KINDS, RunningNormalizer

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
MODES = ("cls", "reg", "multichoice")


@dataclass
class StochasticRep:
    """Diagonal Gaussian representation; variance stored as log-variance."""

    mu: np.ndarray
    log_var: np.ndarray
    deterministic: bool = False

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.log_var = np.clip(np.asarray(self.log_var, dtype=np.float64), LOG_VAR_MIN, LOG_VAR_MAX)
        if self.mu.shape != self.log_var.shape:
            raise InputError(f"mu {self.mu.shape} and log_var {self.log_var.shape} differ")

    @property
    def var(self):
        return np.exp(self.log_var)


@dataclass
class ClsPrediction:
    per_sample_logits: np.ndarray  # (K, C)
    per_sample_probs: np.ndarray  # (K, C)
    averaged_probs: np.ndarray  # (C,)

    @property
    def label(self) -> int:
        return int(np.argmax(self.averaged_probs))


@dataclass
class RegPrediction:
    per_sample_mu: np.ndarray  # (K,)
    per_sample_var: np.ndarray  # (K,)
    averaged_mu: float


@dataclass
class QaModel:
    """Parameters and architecture of the two-branch model.

    Every branch is ``F -> hidden (relu) -> head``. A probabilistic branch
    head emits ``2 * latent_dim`` values (mean, raw log-variance); a
    deterministic one emits ``latent_dim`` and is sampled with zero noise.
    The decoder maps ``[m_k, n_k]`` to ``n_classes`` logits, 2 logits in
    multichoice mode, or ``(mu, raw log-variance)`` in reg mode.
    """

    feature_dim: int
    mode: str = "cls"
    n_classes: int = 4
    latent_dim: int = 16
    hidden_dim: int = 32
    prob_context: bool = True
    prob_query: bool = True
    params: dict = field(default_factory=dict)
    normalizers: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.normalizers:
            self.normalizers = {kind: RunningNormalizer() for kind in KINDS}
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "cls" and self.n_classes < 2:
            raise ConfigurationError("cls mode needs at least 2 classes")
        if min(self.feature_dim, self.latent_dim, self.hidden_dim) < 1:
            raise ConfigurationError("model dimensions must be positive")

    @property
    def out_dim(self) -> int:
        if self.mode == "cls":
            return self.n_classes
        return 2

    def branch_out_dim(self, branch: str) -> int:
        prob = self.prob_context if branch == "context" else self.prob_query
        return 2 * self.latent_dim if prob else self.latent_dim

    def layer_shapes(self) -> dict[str, list[tuple[int, int]]]:
        d, h = self.latent_dim, self.hidden_dim
        return {
            "context": [(h, self.feature_dim), (self.branch_out_dim("context"), h)],
            "query": [(h, self.feature_dim), (self.branch_out_dim("query"), h)],
            "decoder": [(h, 2 * d), (self.out_dim, h)],
        }

    def init_params(self, rng: np.random.Generator) -> "QaModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

        Encoder log-variance biases start at -2 so training begins close to
        deterministic.
        """
        params = {}
        for branch, shapes in self.layer_shapes().items():
            for i, (out_dim, in_dim) in enumerate(shapes):
                bound = 1.0 / np.sqrt(in_dim)
                params[f"{branch}.{i}.weight"] = rng.uniform(-bound, bound, size=(out_dim, in_dim))
                params[f"{branch}.{i}.bias"] = np.zeros(out_dim)
        for branch, prob in (("context", self.prob_context), ("query", self.prob_query)):
            if prob:
                params[f"{branch}.1.bias"][self.latent_dim :] = -2.0
        self.params = params
        return self

    def layers(self, branch: str) -> list[gc.DenseLayerParams]:
        n = len(self.layer_shapes()[branch])
        return [
            gc.DenseLayerParams(self.params[f"{branch}.{i}.weight"], self.params[f"{branch}.{i}.bias"])
            for i in range(n)
        ]

    def copy(self) -> "QaModel":
        clone = QaModel(
            self.feature_dim, self.mode, self.n_classes, self.latent_dim, self.hidden_dim,
            self.prob_context, self.prob_query,
        )
        clone.params = {k: v.copy() for k, v in self.params.items()}
        clone.normalizers = {k: n.copy() for k, n in self.normalizers.items()}
        return clone

    def digest(self) -> str:
        """Hash of all parameters and normalizer statistics."""
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        for kind in sorted(self.normalizers):
            h.update(kind.encode())
            h.update(repr(self.normalizers[kind].state()).encode())
        return h.hexdigest()

    def is_probabilistic(self, branch: str) -> bool:
        return self.prob_context if branch == "context" else self.prob_query


def _check_branch(branch):
    if branch not in ("context", "query"):
        raise ConfigurationError(f"branch must be 'context' or 'query', got {branch!r}")


def pool(seq) -> np.ndarray:
    """Mean over the sequence axis (second to last)."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim < 2 or seq.shape[-2] == 0:
        raise InputError("input sequence must be non-empty")
    return seq.mean(axis=-2)


# ---------------------------------------------------------------- tape paths


def register(model: QaModel, tape: gc.Tape) -> dict[str, gc.Var]:
    return {name: tape.param(name, value) for name, value in model.params.items()}


def _branch_mlp(model, pvars, branch, x):
    n = len(model.layer_shapes()[branch])
    h = x
    for i in range(n):
        h = gc.affine(h, pvars[f"{branch}.{i}.weight"], pvars[f"{branch}.{i}.bias"])
        if i < n - 1:
            h = gc.relu(h)
    return h


def encode_vars(model, pvars, branch, pooled):
    """Return ``(mu, log_var)`` for a (B, F) pooled batch; ``log_var`` is a Var
    for probabilistic branches and a constant array otherwise."""
    tape = next(iter(pvars.values())).tape
    out = _branch_mlp(model, pvars, branch, tape.constant(pooled))
    d = model.latent_dim
    if model.is_probabilistic(branch):
        return out[:, :d], gc.clip(out[:, d:], LOG_VAR_MIN, LOG_VAR_MAX)
    return out, np.full(out.shape, LOG_VAR_MIN)


def sample_vars(mu, log_var, K, rng, deterministic):
    """Reparameterized ``(K, B, d)`` samples; gradients reach mu and log_var only."""
    B, d = mu.shape
    mu3 = gc.reshape(mu, (1, B, d))
    if deterministic:
        return gc.add(mu3, np.zeros((K, B, d)))
    eps = rng.standard_normal((K, B, d))
    std = gc.exp(gc.mul(log_var, 0.5))
    return gc.add(mu3, gc.mul(gc.reshape(std, (1, B, d)), eps))


def kl_vars(mu, log_var):
    """Per-row KL(N(mu, exp(log_var)) || N(0, I)), shape (B,)."""
    if isinstance(log_var, gc.Var):
        inner = gc.square(mu) + gc.exp(log_var) - log_var - 1.0
    else:
        inner = gc.square(mu) + (np.exp(log_var) - log_var - 1.0)
    return gc.mul(gc.sum(inner, axis=-1), 0.5)


@dataclass
class BatchForward:
    """Tape outputs and numeric views for one batch of B examples."""

    tape: gc.Tape
    params: dict
    out: gc.Var  # (K, B, out_dim)
    kl: gc.Var  # (B,) context KL + query KL
    context_mu: np.ndarray
    context_log_var: np.ndarray
    query_mu: np.ndarray
    query_log_var: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.out.value


def forward_batch(model: QaModel, context, query, K: int, rng, tape: gc.Tape | None = None) -> BatchForward:
    """Run a batch through both encoders and the decoder.

    ``context``/``query`` are (B, T, F)/(B, J, F) sequences or already pooled
    (B, F) arrays. Noise is drawn as context ``(K, B, d)`` then query
    ``(K, B, d)``; deterministic branches draw nothing.
    """
    if K < 1:
        raise ConfigurationError("K must be at least 1")
    context = np.asarray(context, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    cp = pool(context) if context.ndim == 3 else context
    qp = pool(query) if query.ndim == 3 else query
    for name, arr in (("context", cp), ("query", qp)):
        if arr.ndim != 2 or arr.shape[1] != model.feature_dim:
            raise InputError(f"{name} features must have width {model.feature_dim}, got {arr.shape}")
    if cp.shape[0] != qp.shape[0]:
        raise InputError("context and query batches differ in size")
    tape = tape if tape is not None else gc.Tape()
    pvars = register(model, tape)
    c_mu, c_lv = encode_vars(model, pvars, "context", cp)
    q_mu, q_lv = encode_vars(model, pvars, "query", qp)
    m = sample_vars(c_mu, c_lv, K, rng, not model.prob_context)
    n = sample_vars(q_mu, q_lv, K, rng, not model.prob_query)
    B, d = cp.shape[0], model.latent_dim
    z = gc.concat([gc.reshape(m, (K * B, d)), gc.reshape(n, (K * B, d))], axis=-1)
    out = gc.reshape(_branch_mlp(model, pvars, "decoder", z), (K, B, model.out_dim))
    kl = kl_vars(c_mu, c_lv) + kl_vars(q_mu, q_lv)
    return BatchForward(
        tape, pvars, out, kl,
        c_mu.value, np.asarray(_val(c_lv)), q_mu.value, np.asarray(_val(q_lv)),
    )


def _val(x):
    return x.value if isinstance(x, gc.Var) else x


def nll_vars(model: QaModel, fwd: BatchForward, targets) -> gc.Var:
    """Per-example negative log-likelihood averaged over the K draws, shape (B,)."""
    out = fwd.out
    if model.mode == "reg":
        y = np.asarray(targets, dtype=np.float64)
        mu_k = out[:, :, 0]
        lv_k = gc.clip(out[:, :, 1], LOG_VAR_MIN, LOG_VAR_MAX)
        resid = gc.sub(mu_k, y[None, :])
        terms = gc.mul(gc.square(resid), gc.exp(-lv_k)) + lv_k
        return gc.mean(terms, axis=0)
    labels = np.asarray(targets, dtype=np.intp)
    K = out.shape[0]
    logp = gc.log_softmax(out)
    picked = gc.gather(logp, np.broadcast_to(labels, (K, labels.shape[0])))
    return gc.neg(gc.mean(picked, axis=0))


def cls_probs(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def reg_outputs(out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split decoder values (..., 2) into mean and clamped variance."""
    return out[..., 0], np.exp(np.clip(out[..., 1], LOG_VAR_MIN, LOG_VAR_MAX))


# ------------------------------------------------------------ public ops


def encode(model: QaModel, branch: str, seq) -> StochasticRep:
    """Mean-pool ``seq`` (T, F) and map it to a Gaussian representation."""
    _check_branch(branch)
    pooled = pool(seq)
    if pooled.shape != (model.feature_dim,):
        raise InputError(f"expected feature width {model.feature_dim}, got {pooled.shape}")
    tape = gc.Tape()
    pvars = register(model, tape)
    mu, lv = encode_vars(model, pvars, branch, pooled[None, :])
    return StochasticRep(mu.value[0], np.asarray(_val(lv))[0], not model.is_probabilistic(branch))


def sample_rep(rep: StochasticRep, K: int, rng: np.random.Generator) -> np.ndarray:
    """``K`` draws ``mu + exp(log_var / 2) * eps``; deterministic reps return mu."""
    if K < 1:
        raise ConfigurationError("K must be at least 1")
    if rep.deterministic:
        return np.repeat(rep.mu[None, :], K, axis=0)
    eps = rng.standard_normal((K,) + rep.mu.shape)
    return rep.mu + np.exp(0.5 * rep.log_var) * eps


def _decode(model, m, n):
    tape = gc.Tape()
    pvars = register(model, tape)
    z = np.concatenate([np.atleast_2d(m), np.atleast_2d(n)], axis=-1)
    return _branch_mlp(model, pvars, "decoder", tape.constant(z)).value


def decode_cls(model: QaModel, m, n) -> tuple[np.ndarray, np.ndarray]:
    if model.mode == "reg":
        raise ConfigurationError("decode_cls needs a cls or multichoice model")
    logits = _decode(model, m, n)
    if np.ndim(m) == 1:
        logits = logits[0]
    return logits, cls_probs(logits)


def decode_reg(model: QaModel, m, n) -> tuple[np.ndarray, np.ndarray]:
    if model.mode != "reg":
        raise ConfigurationError("decode_reg needs a reg model")
    out = _decode(model, m, n)
    if np.ndim(m) == 1:
        out = out[0]
    return reg_outputs(out)


def predict(model: QaModel, context, query, K: int, rng) -> ClsPrediction | RegPrediction:
    """Monte Carlo predictive distribution of one (context, query) example."""
    fwd = forward_batch(model, np.asarray(context)[None], np.asarray(query)[None], K, rng)
    out = fwd.values[:, 0, :]
    if model.mode == "reg":
        mu_k, var_k = reg_outputs(out)
        return RegPrediction(mu_k, var_k, float(mu_k.mean()))
    probs = cls_probs(out)
    return ClsPrediction(out, probs, probs.mean(axis=0))


def argmax_lowest(values) -> int:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InputError("cannot take argmax of an empty vector")
    return int(np.argmax(values))  # numpy returns the first maximum


def predict_multichoice(option_correct_probs) -> int:
    """Index of the option most likely to be correct; ties go to the lowest index."""
    probs = np.asarray(option_correct_probs, dtype=np.float64)
    if probs.size == 0:
        raise InputError("no options given")
    if np.any(probs < 0) or np.any(probs > 1):
        raise InputError("option probabilities must lie in [0, 1]")
    return argmax_lowest(probs)


def kl_std_normal(rep: StochasticRep) -> float:
    """KL(N(mu, diag var) || N(0, I)) = 0.5 * sum(mu^2 + var - log_var - 1)."""
    return float(0.5 * np.sum(rep.mu**2 + rep.var - rep.log_var - 1.0))


def nll_cls(prediction: ClsPrediction, label: int) -> float:
    p = prediction.per_sample_probs[:, int(label)]
    return float(-np.mean(np.log(p)))


def nll_reg(prediction: RegPrediction, y: float) -> float:
    mu, var = prediction.per_sample_mu, prediction.per_sample_var
    return float(np.mean((mu - y) ** 2 / var + np.log(var)))


def total_loss(weighted_nll, context_rep: StochasticRep, query_rep: StochasticRep, alpha: float) -> float:
    if alpha < 0:
        raise ConfigurationError("alpha must be non-negative")
    return float(weighted_nll) + alpha * (kl_std_normal(context_rep) + kl_std_normal(query_rep))
