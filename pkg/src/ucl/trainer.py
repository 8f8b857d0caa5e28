"""Mini-batch training with uncertainty-aware curriculum weights.

Per batch the order is fixed: encode both branches, draw K reparameterized
samples, decode, average, measure uncertainty, batch-normalize it, turn it
into detached weights, form ``mean(w * nll) + alpha * mean(KL)`` and take
one Adam step. That order matters because the normalizer statistics are
updated batch by batch.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import gradcore as gc
from . import probmodel as pm
from . import uncertainty as unc
from .curriculum import CL_MODES, Scheduler, lambda_at, spl_hard_weight, spl_linear_weight, ucl_weight_values
from .exceptions import ConfigurationError, NumericalError
from .synthtasks import SynthDataset, SynthSplits

logger = logging.getLogger(__name__)

UNCERTAINTY_FOR_MODE = {"ucl_feature": "feature", "ucl_predictive": "predictive"}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-4
    k_train: int = 5
    k_test: int = 10
    alpha: float = 1e-4
    s1: float = 3.0
    s2: float = 7.0
    cl_mode: str = "none"
    spl_s1: float = 1.5
    spl_s2: float = 3.0
    prob_context: bool = True
    prob_query: bool = True
    hidden_dim: int = 32
    latent_dim: int = 16
    momentum: float = 0.1
    bn_eps: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        checks = [
            ("epochs", self.epochs >= 1, "epochs must be >= 1"),
            ("batch_size", self.batch_size >= 1, "batch_size must be >= 1"),
            ("learning_rate", self.learning_rate > 0, "learning_rate must be > 0"),
            ("k_train", self.k_train >= 1, "k_train must be >= 1"),
            ("k_test", self.k_test >= 1, "k_test must be >= 1"),
            ("alpha", self.alpha >= 0, "alpha must be >= 0"),
            ("cl_mode", self.cl_mode in CL_MODES, f"cl_mode must be one of {CL_MODES}"),
            ("s1", self.s1 > 0, "scheduler needs s1 > 0"),
            ("s2", self.s1 < self.s2, f"scheduler needs s1 < s2 (got s1={self.s1}, s2={self.s2})"),
            ("spl_s1", self.spl_s1 > 0, "SPL scheduler needs spl_s1 > 0"),
            ("spl_s2", self.spl_s1 < self.spl_s2, "SPL scheduler needs spl_s1 < spl_s2"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigurationError(msg, key=key)
        if self.uses_batch_norm and self.batch_size < 2:
            raise ConfigurationError("UCL weighting needs batch_size >= 2", key="batch_size")
        if self.cl_mode == "ucl_feature" and self.k_train < 2:
            raise ConfigurationError("feature uncertainty needs k_train >= 2", key="k_train")

    @property
    def uses_batch_norm(self) -> bool:
        return self.cl_mode in UNCERTAINTY_FOR_MODE

    @property
    def uncertainty_kind(self) -> str | None:
        return UNCERTAINTY_FOR_MODE.get(self.cl_mode)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def temperature(self, epoch: int) -> float:
        return _schedule(self.s1, self.s2, self.epochs, epoch)

    def spl_threshold(self, epoch: int) -> float:
        return _schedule(self.spl_s1, self.spl_s2, self.epochs, epoch)


def _schedule(s1, s2, epochs, epoch):
    if epochs < 2:
        return float(s1)
    return lambda_at(Scheduler(s1, s2, epochs), epoch)


@dataclass
class EpochMetrics:
    epoch: int
    mean_weighted_loss: float
    mean_raw_loss: float
    mean_weight: float
    train_metric: float
    val_metric: float | None
    metric_name: str
    temperature: float
    wall_time: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """Bias-corrected Adam update of ``params`` in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigurationError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def build_model(dataset: SynthDataset, config: TrainConfig, mode: str | None = None) -> pm.QaModel:
    """Fresh model sized for ``dataset``; init RNG derived from ``config.seed``."""
    if mode is None:
        mode = {"multichoice": "multichoice", "reg": "reg"}.get(dataset.task, "cls")
    n_classes = dataset.n_classes if mode == "cls" else 2
    model = pm.QaModel(
        dataset.feature_dim, mode, max(n_classes, 2), config.latent_dim, config.hidden_dim,
        config.prob_context, config.prob_query,
    )
    for norm in model.normalizers.values():
        norm.momentum, norm.eps = config.momentum, config.bn_eps
    return model.init_params(np.random.default_rng([config.seed, 2]))


def shuffle_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Row order of one training epoch."""
    return np.random.default_rng([seed, 0, epoch]).permutation(n)


def train_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Batches of one epoch; a trailing batch smaller than 2 is dropped."""
    order = shuffle_order(n, seed, epoch)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if batches and len(batches[-1]) < 2:
        batches.pop()
    return batches


def raw_uncertainties(model: pm.QaModel, values: np.ndarray) -> dict[str, np.ndarray]:
    """Per-example raw feature and predictive uncertainty from (K, B, out) decoder values."""
    if model.mode == "reg":
        mu_k, var_k = pm.reg_outputs(values)
        return {
            "feature": unc.feature_uncertainty_reg(mu_k),
            "predictive": unc.predictive_uncertainty_reg(var_k),
        }
    probs = pm.cls_probs(values)
    return {
        "feature": unc.feature_uncertainty_cls(values),
        "predictive": unc.predictive_uncertainty_cls(probs.mean(axis=0)),
    }


@dataclass
class StepResult:
    loss: float
    nll: np.ndarray
    weights: np.ndarray
    raw_u: dict
    normalized_u: dict
    grads: dict
    values: np.ndarray


def compute_step(
    model: pm.QaModel,
    context,
    query,
    targets,
    config: TrainConfig,
    epoch: int,
    rng: np.random.Generator,
    weights: np.ndarray | None = None,
    batch_index: int | None = None,
) -> StepResult:
    """Loss and gradients for one batch, without updating parameters.

    Passing ``weights`` skips the curriculum rule and uses the given numbers
    instead; the normalizers are still updated so the two paths leave the
    model in the same state.
    """
    fwd = pm.forward_batch(model, context, query, config.k_train, rng)
    nll = pm.nll_vars(model, fwd, targets)
    raw = raw_uncertainties(model, fwd.values)
    normalized = {}
    if len(nll.value) >= 2:
        normalized = {kind: unc.normalize_batch(raw[kind], model.normalizers[kind].train()) for kind in unc.KINDS}
    if weights is None:
        weights = curriculum_weights(config, epoch, nll.value, normalized)
    weights = np.asarray(weights, dtype=np.float64)
    loss = gc.mean(gc.mul(nll, weights))
    if config.alpha > 0:
        loss = loss + gc.mul(gc.mean(fwd.kl), config.alpha)
    for term, val in (("nll", nll.value), ("kl", fwd.kl.value), ("loss", loss.value)):
        if not np.all(np.isfinite(val)):
            raise NumericalError(
                f"non-finite {term} at epoch {epoch}, batch {batch_index}", epoch, batch_index, term
            )
    grads = fwd.tape.backward(loss)
    return StepResult(float(loss.value), nll.value, weights, raw, normalized, grads, fwd.values)


def curriculum_weights(config: TrainConfig, epoch: int, nll: np.ndarray, normalized: dict) -> np.ndarray:
    mode = config.cl_mode
    if mode == "none":
        return np.ones_like(nll)
    if mode in UNCERTAINTY_FOR_MODE:
        if not normalized:
            raise ConfigurationError("UCL weighting needs batches of at least 2", key="batch_size")
        return ucl_weight_values(normalized[UNCERTAINTY_FOR_MODE[mode]], config.temperature(epoch))
    lam = config.spl_threshold(epoch)
    if mode == "spl_hard":
        return np.asarray(spl_hard_weight(nll, lam), dtype=np.float64)
    return np.asarray(spl_linear_weight(np.maximum(nll, 0.0), lam), dtype=np.float64)


class Trainer:
    """Mutable state of one run: the model plus its optimizer and RNG state."""

    def __init__(self, model: pm.QaModel, config: TrainConfig):
        self.model = model
        self.config = config
        self.adam = AdamState()
        self.rng = np.random.default_rng([config.seed, 1])

    def step(self, context, query, targets, epoch: int, weights=None, batch_index=None) -> StepResult:
        res = compute_step(
            self.model, context, query, targets, self.config, epoch, self.rng, weights, batch_index
        )
        adam_step(self.model.params, res.grads, self.adam, self.config.learning_rate)
        return res

    def run_epoch(self, data: SynthDataset, epoch: int, on_step=None) -> tuple[float, float, float, float]:
        losses, raws, ws, hits = [], [], [], []
        for bi, idx in enumerate(train_batches(len(data), self.config.batch_size, self.config.seed, epoch)):
            res = self.step(data.context[idx], data.query[idx], data.target[idx], epoch, batch_index=bi)
            if on_step is not None:
                on_step(epoch, bi, res)
            losses.append(res.loss)
            raws.append(res.nll.mean())
            ws.append(res.weights)
            hits.append(_batch_metric(self.model, res.values, data.target[idx]))
        if not losses:
            raise ConfigurationError("training set too small for one batch of 2", key="n_train")
        w = np.concatenate(ws)
        return float(np.mean(losses)), float(np.mean(raws)), float(w.mean()), float(np.concatenate(hits).mean())


def _batch_metric(model, values, targets):
    if model.mode == "reg":
        mu = pm.reg_outputs(values)[0].mean(axis=0)
        return (mu - targets) ** 2
    return (pm.cls_probs(values).mean(axis=0).argmax(axis=-1) == targets).astype(np.float64)


def train(
    model: pm.QaModel | None,
    dataset: SynthDataset | SynthSplits,
    config: TrainConfig,
    val: SynthDataset | None = None,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
    on_step: Callable[[int, int, StepResult], None] | None = None,
) -> tuple[pm.QaModel, list[EpochMetrics]]:
    """Run ``config.epochs`` epochs; returns the (mutated) model and epoch metrics.

    ``on_step(epoch, batch_index, result)`` sees every optimizer step.
    """
    if isinstance(dataset, SynthSplits):
        val = dataset.val if val is None else val
        dataset = dataset.train
    data = dataset.as_pairs()
    if model is None:
        model = build_model(dataset, config)
    _check_mode(model, dataset)
    trainer = Trainer(model, config)
    history = []
    metric_name = "mse" if model.mode == "reg" else "accuracy"
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        wloss, rloss, mw, tm = trainer.run_epoch(data, epoch, on_step)
        vm = None
        if val is not None:
            vm = evaluate(model, val, config.k_test, np.random.default_rng([config.seed, 3, epoch])).metric
        m = EpochMetrics(
            epoch, wloss, rloss, mw, tm, vm, metric_name, config.temperature(epoch),
            time.perf_counter() - t0,
        )
        logger.debug("epoch %d: loss %.4f weight %.3f %s %.4f", epoch, wloss, mw, metric_name, tm)
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)
    return model, history


def _check_mode(model, dataset):
    expected = {"multichoice": "multichoice", "reg": "reg"}.get(dataset.task, "cls")
    if model.mode != expected:
        raise ConfigurationError(f"model mode {model.mode!r} does not match task {dataset.task!r}")


@dataclass
class EvalResult:
    metric_name: str
    metric: float
    predictions: np.ndarray
    correct: np.ndarray | None
    clean_metric: float
    raw_feature: np.ndarray
    raw_predictive: np.ndarray
    norm_feature: np.ndarray
    norm_predictive: np.ndarray
    noise_level: np.ndarray
    targets: np.ndarray

    def uncertainty(self, kind: str = "predictive", normalized: bool = False) -> np.ndarray:
        prefix = "norm" if normalized else "raw"
        return getattr(self, f"{prefix}_{kind}")


def evaluate(
    model: pm.QaModel, dataset: SynthDataset, k_test: int, rng: np.random.Generator, batch_size: int = 256
) -> EvalResult:
    """Monte Carlo evaluation; never touches parameters or normalizer state."""
    _check_mode(model, dataset)
    data = dataset.as_pairs()
    norms = {k: n.copy().eval() for k, n in model.normalizers.items()}
    outs = []
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        outs.append(pm.forward_batch(model, data.context[sl], data.query[sl], k_test, rng).values)
    values = np.concatenate(outs, axis=1)
    raw = raw_uncertainties(model, values)
    normed = {k: unc.normalize_batch(raw[k], norms[k]) for k in unc.KINDS}

    if model.mode == "reg":
        pred = pm.reg_outputs(values)[0].mean(axis=0)
        metric = float(np.mean((pred - dataset.target) ** 2))
        clean = float(np.mean((pred - dataset.clean_target) ** 2))
        return EvalResult(
            "mse", metric, pred, None, clean, raw["feature"], raw["predictive"],
            normed["feature"], normed["predictive"], dataset.noise_level, dataset.target,
        )

    probs = pm.cls_probs(values).mean(axis=0)
    if model.mode == "multichoice":
        n, o = len(dataset), dataset.n_options
        correct_p = probs[:, 1].reshape(n, o)
        pred = np.array([pm.predict_multichoice(row) for row in correct_p])
        chosen = np.arange(n) * o + pred
        raw = {k: v[chosen] for k, v in raw.items()}
        normed = {k: v[chosen] for k, v in normed.items()}
    else:
        pred = probs.argmax(axis=-1)
    correct = pred == dataset.target
    return EvalResult(
        "accuracy", float(correct.mean()), pred, correct, float(np.mean(pred == dataset.clean_target)),
        raw["feature"], raw["predictive"], normed["feature"], normed["predictive"],
        dataset.noise_level, dataset.target,
    )
