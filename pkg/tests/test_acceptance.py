"""Acceptance criteria 1 to 11, each reporting one PASS/FAIL line.

Criteria 8 to 11 train 5 seeds each; the trained models are shared through
module-scoped fixtures. Seed ``s`` sets both the task and the training seed.
"""

import dataclasses
import math
from pathlib import Path

import numpy as np
import pytest

from ucl import curriculum as cl
from ucl import gradcore as gc
from ucl import probmodel as pm
from ucl import synthtasks as syn
from ucl import trainer as tr
from ucl import uncertainty as unc
from ucl.evalcli.config import load_config
from ucl.evalcli.report import decile_gap, spearman

from conftest import report_criterion, small_model
from oracles import plain_train

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SEEDS = range(5)
TEST_STREAM = 5


def seeded(config, seed):
    return dataclasses.replace(config.task, seed=seed), config.train.replace(seed=seed)


def train_eval(task_cfg, train_cfg, k_test=None):
    splits = syn.generate(task_cfg)
    model, _ = tr.train(None, splits, train_cfg)
    res = tr.evaluate(model, splits.test, k_test or train_cfg.k_test, np.random.default_rng([train_cfg.seed, TEST_STREAM]))
    return model, splits, res


# ------------------------------------------------------------------ 1


def _ucl_fd_error(mode, init_seed):
    model = small_model(mode, n_classes=3, seed=init_seed)
    rng = np.random.default_rng(100 + init_seed)
    B = 6
    ctx, qry = rng.standard_normal((B, 3, 4)), rng.standard_normal((B, 2, 4))
    y = rng.integers(0, 3, B) if mode == "cls" else rng.standard_normal(B)
    config = tr.TrainConfig(cl_mode="ucl_predictive", alpha=0.1, k_train=3, epochs=5)
    # the curriculum weights are detached: compute them once at the base point
    base = tr.compute_step(model.copy(), ctx, qry, y, config, 2, np.random.default_rng(7))
    weights = base.weights

    def loss_fn(params, tape):
        m = model.copy()
        m.params = params
        fwd = pm.forward_batch(m, ctx, qry, 3, np.random.default_rng(7), tape=tape)
        nll = pm.nll_vars(m, fwd, y)
        return cl.apply_weights(nll, weights) + gc.mul(gc.mean(fwd.kl), 0.1)

    return gc.finite_diff_check(loss_fn, {k: v.copy() for k, v in model.params.items()}, h=1e-4)


def test_criterion_01_gradient_fidelity():
    errs = {mode: [_ucl_fd_error(mode, s) for s in range(10)] for mode in ("cls", "reg")}
    worst = max(max(v) for v in errs.values())
    ok = worst < 1e-4
    report_criterion(1, ok, f"max relative FD error {worst:.2e} over 10 inits x {{cls, reg}} (need < 1e-4)")
    assert ok


# ------------------------------------------------------------------ 2


def test_criterion_02_kl_monte_carlo():
    rng = np.random.default_rng(2024)
    rel = []
    for _ in range(20):
        rep = pm.StochasticRep(rng.standard_normal(4), rng.uniform(-1.5, 1.5, 4))
        z = rep.mu + np.exp(0.5 * rep.log_var) * rng.standard_normal((100_000, 4))
        log_q = -0.5 * (np.log(2 * np.pi) + rep.log_var + (z - rep.mu) ** 2 / rep.var).sum(axis=1)
        log_p = -0.5 * (np.log(2 * np.pi) + z**2).sum(axis=1)
        mc = (log_q - log_p).mean()
        exact = pm.kl_std_normal(rep)
        rel.append(abs(mc - exact) / exact)
    at_zero = pm.kl_std_normal(pm.StochasticRep(np.zeros(4), np.zeros(4)))
    ok = max(rel) < 1e-2 and abs(at_zero) <= 1e-12
    report_criterion(2, ok, f"max MC relative error {max(rel):.2e} over 20 pairs (need < 1e-2); KL(0,0) = {at_zero:.1e}")
    assert ok


# ------------------------------------------------------------------ 3


def test_criterion_03_elbo_inequality():
    model = small_model(n_classes=2, seed=3)
    rng = np.random.default_rng(33)
    slack = []
    for i in range(10):
        ctx, qry = rng.standard_normal((1, 3, 4)), rng.standard_normal((1, 2, 4))
        label = int(rng.integers(0, 2))
        # independent draws for the two estimates
        fwd_a = pm.forward_batch(model, ctx, qry, 10_000, np.random.default_rng([i, 0]))
        fwd_b = pm.forward_batch(model, ctx, qry, 10_000, np.random.default_rng([i, 1]))
        elbo = np.log(pm.cls_probs(fwd_a.values)[:, 0, label]).mean() - fwd_a.kl.value[0]
        evidence = np.log(pm.cls_probs(fwd_b.values)[:, 0, label].mean())
        slack.append(evidence - elbo)
    ok = min(slack) >= -1e-2
    report_criterion(3, ok, f"min (log evidence - ELBO) {min(slack):.4f} over 10 data (need >= -1e-2)")
    assert ok


# ------------------------------------------------------------------ 4


def test_criterion_04_detach_contract():
    worst = 0.0
    for task, mode in (("cls", "ucl_predictive"), ("cls", "ucl_feature"), ("reg", "ucl_predictive"), ("reg", "ucl_feature")):
        splits = syn.generate(syn.TaskConfig(task=task, n_train=64, n_val=8, n_test=8))
        config = tr.TrainConfig(cl_mode=mode, alpha=0.1, learning_rate=1e-2, batch_size=32, epochs=4)
        model = tr.build_model(splits.train, config)
        twin = model.copy()
        a, b = tr.Trainer(model, config), tr.Trainer(twin, config)
        d = splits.train
        for epoch, idx in enumerate([np.arange(32), np.arange(32, 64)]):
            res = a.step(d.context[idx], d.query[idx], d.target[idx], epoch)
            b.step(d.context[idx], d.query[idx], d.target[idx], epoch, weights=np.array(res.weights))
        worst = max(worst, max(np.max(np.abs(model.params[k] - twin.params[k])) for k in model.params))
    ok = worst <= 1e-12
    report_criterion(4, ok, f"max parameter difference {worst:.1e} after 2 steps, cls/reg x feature/predictive (need <= 1e-12)")
    assert ok


# ------------------------------------------------------------------ 5


def test_criterion_05_normalization():
    splits = syn.generate(syn.TaskConfig(n_train=640))
    config = tr.TrainConfig(cl_mode="ucl_predictive", epochs=3)
    worst_mean, worst_var, n = 0.0, 0.0, 0

    def hook(epoch, batch, res):
        nonlocal worst_mean, worst_var, n
        for kind in unc.KINDS:
            out, raw = res.normalized_u[kind], res.raw_u[kind]
            worst_mean = max(worst_mean, abs(out.mean()))
            if np.ptp(raw) > 0:
                worst_var = max(worst_var, abs(out.var() - 1.0))
            n += 1

    model, _ = tr.train(None, splits.train, config, on_step=hook)
    before = model.digest()
    tr.evaluate(model, splits.test, 3, np.random.default_rng(0))
    for norm in model.normalizers.values():
        norm.copy().eval()(np.arange(5.0))
    unchanged = model.digest() == before
    ok = worst_mean <= 1e-9 and worst_var <= 1e-3 and unchanged
    report_criterion(
        5, ok,
        f"{n} train batches: max |mean| {worst_mean:.1e} (<= 1e-9), max |var - 1| {worst_var:.1e} (<= 1e-3); "
        f"eval digest unchanged: {unchanged}",
    )
    assert ok


# ------------------------------------------------------------------ 6


def test_criterion_06_formula_exactness():
    checks = [
        (cl.spl_hard_weight(0.5, 1.0), 1.0),
        (cl.spl_hard_weight(1.0, 1.0), 0.0),
        (cl.spl_hard_weight(2.0, 1.0), 0.0),
        (unc.feature_uncertainty_cls([[1.0], [3.0]]), 1.0),
        (unc.feature_uncertainty_cls([[1.0, 0.0], [3.0, 0.0]]), 0.5),
        (unc.feature_uncertainty_reg([1.0, 3.0]), 1.0),
        (unc.feature_uncertainty_reg([0.0, 0.0, 3.0]), 2.0),
        (unc.predictive_uncertainty_cls([0.75, 0.25]), -0.75 * math.log(0.75) - 0.25 * math.log(0.25)),
        (unc.predictive_uncertainty_cls([0.25] * 4), math.log(4)),
        (unc.predictive_uncertainty_reg([1.0, 3.0]), 2.0),
        (unc.predictive_uncertainty_reg([5.0]), 5.0),
        (cl.lambda_at(cl.Scheduler(3, 7, 20), 0), 3.0),
        (cl.lambda_at(cl.Scheduler(3, 7, 20), 19), 7.0),
        (cl.lambda_at(cl.Scheduler(1, 5, 2), 1), 5.0),
        (cl.lambda_at(cl.Scheduler(3, 7, 5), 2), 5.0),
    ]
    worst = max(abs(got - want) for got, want in checks)
    ok = worst <= 1e-9
    report_criterion(6, ok, f"{len(checks)} hand-computed values, max abs error {worst:.1e} (need <= 1e-9)")
    assert ok


# ------------------------------------------------------------------ 7


def test_criterion_07_oracle_equivalence():
    splits = syn.generate(syn.TaskConfig(n_train=200, n_val=10, n_test=10))
    config = tr.TrainConfig(cl_mode="none", alpha=0.0, k_train=1, prob_context=False, prob_query=False, epochs=15)
    model = tr.build_model(splits.train, config)
    init = {k: v.copy() for k, v in model.params.items()}
    losses = []
    tr.train(model, splits.train, config, on_step=lambda e, b, r: losses.append(r.loss))
    losses = np.array(losses[:100])
    d = splits.train
    ref, _ = plain_train(init, d.context.mean(axis=1), d.query.mean(axis=1), d.target, config.learning_rate, 32, 0, 100)
    worst = float(np.max(np.abs(losses - ref)))
    ok = len(losses) == 100 and worst <= 1e-9
    report_criterion(7, ok, f"max per-step loss difference vs independent trainer {worst:.1e} over {len(losses)} steps (need <= 1e-9)")
    assert ok


# ------------------------------------------------------------------ 8 and 11


@pytest.fixture(scope="module")
def default_runs():
    base = load_config(CONFIGS / "default.cfg")
    runs = []
    for s in SEEDS:
        task_cfg, train_cfg = seeded(base, s)
        runs.append(train_eval(task_cfg, train_cfg))
    return runs


def test_criterion_08_uncertainty_difficulty(default_runs):
    rhos, gaps = [], []
    for _, splits, res in default_runs:
        u = res.uncertainty("predictive", normalized=True)
        rhos.append(spearman(u, res.noise_level))
        gaps.append(decile_gap(res.correct, u))
    n_rho = sum(r > 0.3 for r in rhos)
    n_gap = sum(g >= 0.10 for g in gaps)
    ok = n_rho >= 4 and n_gap == len(gaps)
    report_criterion(
        8, ok,
        f"spearman(U_P, noise) {np.round(rhos, 3).tolist()} ({n_rho}/5 > 0.3, need >= 4); "
        f"decile accuracy gap {np.round(np.array(gaps) * 100, 1).tolist()} pts ({n_gap}/5 >= 10)",
    )
    assert ok


def test_criterion_11_sampling_times(default_runs):
    spreads = []
    for (model, splits, _), s in zip(default_runs, SEEDS):
        accs = [tr.evaluate(model, splits.test, k, np.random.default_rng([s, TEST_STREAM])).metric for k in (1, 3, 7, 10)]
        spreads.append(100 * (max(accs) - min(accs)))
    ok = max(spreads) <= 2.0
    report_criterion(11, ok, f"accuracy spread over k_test in {{1,3,7,10}} per seed {np.round(spreads, 2).tolist()} pts (need <= 2)")
    assert ok


# ------------------------------------------------------------------ 9 and 10


@pytest.fixture(scope="module")
def high_noise_runs():
    base = load_config(CONFIGS / "high_noise.cfg")
    acc = {}
    for mode in ("none", "ucl_predictive", "spl_hard"):
        acc[mode] = []
        for s in SEEDS:
            task_cfg, train_cfg = seeded(base, s)
            acc[mode].append(train_eval(task_cfg, train_cfg.replace(cl_mode=mode))[2].metric)
    return {k: np.array(v) for k, v in acc.items()}


def test_criterion_09_cl_benefit(high_noise_runs):
    d = high_noise_runs["ucl_predictive"] - high_noise_runs["none"]
    wins = int(np.sum(d >= 0))
    ok = wins >= 4 and d.mean() > 0
    report_criterion(
        9, ok,
        f"high-noise task: ucl_predictive - none per seed {np.round(d * 100, 2).tolist()} pts, "
        f"mean {d.mean() * 100:+.2f} pts, {wins}/5 seeds >= 0 (need >= 4 and mean > 0)",
    )
    assert ok


def test_criterion_10_ucl_vs_spl(high_noise_runs):
    ucl = (high_noise_runs["ucl_predictive"] - high_noise_runs["none"]).mean()
    spl = (high_noise_runs["spl_hard"] - high_noise_runs["none"]).mean()
    ok = ucl >= spl
    report_criterion(10, ok, f"mean improvement over none: ucl_predictive {ucl * 100:+.2f} pts vs spl_hard {spl * 100:+.2f} pts")
    assert ok
