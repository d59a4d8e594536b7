"""End-to-end acceptance checks AC1-AC10.

Each ``test_acN_*`` reports one PASS/FAIL line per criterion in the terminal
summary (see conftest). Measured values are attached as user properties.
"""
import json
import math
import time

import numpy as np
import pytest

from conftest import random_survival
from survbench import gbt, harness
from survbench.cli import main
from survbench.cox_linear import breslow_baseline, fit_newton
from survbench.cox_objective import build_risk_index, grad_hess, grad_hess_naive, partial_log_likelihood
from survbench.dataset import ColumnKind, SurvivalDataset, SynthSpec, generate_synthetic, make_folds, subsample
from survbench.harness import ExperimentConfig, GridSpec, compare_models, run_nested_cv, scaling_experiment
from survbench.metrics import (
    UndefinedMetricError,
    bh_fdr,
    harrell_c,
    kaplan_meier,
    logrank_test,
    rmst,
    uno_c,
)
from survbench.mlp import backward, cox_loss_and_grad, forward, predict
from test_metrics import uno_oracle
from test_mlp import loss_of, tiny_problem

pytestmark = pytest.mark.slow


def ds_from(x, time, event):
    x = np.asarray(x, dtype=float).reshape(len(time), -1)
    return SurvivalDataset(X=x, columns=[f"x{j}" for j in range(x.shape[1])],
                           kinds=[ColumnKind.CONTINUOUS] * x.shape[1],
                           time=np.asarray(time, dtype=float), event=np.asarray(event, dtype=np.int8))


# ---------------------------------------------------------------- AC1


def test_ac1_objective_matches_oracle_and_differences(record_property):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_exact = worst_fd = 0.0
    for k in range(500):
        n = int(rng.integers(1, 2001))
        ties = [None, 3, 20, 200][k % 4]
        censor = float(rng.uniform(0.0, 0.9))
        t, e = random_survival(rng, n, ties, censor)
        eta = rng.normal(0, rng.choice([0.1, 1.0, 3.0]), size=n)
        idx = build_risk_index(t, e)
        fast, slow = grad_hess(idx, eta), grad_hess_naive(idx, eta)
        worst_exact = max(worst_exact, np.max(np.abs(fast.grad - slow.grad)), np.max(np.abs(fast.hess - slow.hess)),
                          abs(fast.loss - slow.loss))
        h = 1e-5
        for j in rng.choice(n, size=min(n, 3), replace=False):
            step = np.zeros(n)
            step[j] = h
            fd = (partial_log_likelihood(idx, eta + step) - partial_log_likelihood(idx, eta - step)) / (2 * h)
            worst_fd = max(worst_fd, abs(fd - fast.grad[j]) / max(1.0, abs(fast.grad[j])))
    elapsed = time.perf_counter() - t0
    record_property("max_abs_diff", f"{worst_exact:.2e}")
    record_property("max_rel_fd", f"{worst_fd:.2e}")
    record_property("seconds", f"{elapsed:.1f}")
    assert worst_exact <= 1e-12
    assert worst_fd <= 1e-6
    assert elapsed < 60


# ---------------------------------------------------------------- AC2


def test_ac2_hand_anchors():
    idx = build_risk_index([1, 2, 3], [1, 1, 1])
    assert abs(partial_log_likelihood(idx, np.zeros(3)) - (-1.791759469228055)) <= 1e-9
    assert abs(partial_log_likelihood(build_risk_index([1, 1, 2], [1, 1, 1]), np.zeros(3)) - (-2.1972245773362196)) <= 1e-9
    assert np.max(np.abs(grad_hess(idx, np.zeros(3)).grad - [2 / 3, 1 / 6, -5 / 6])) <= 1e-9
    zero = fit_newton(ds_from(np.zeros(3), [1, 2, 3], [1, 1, 1]))
    base = breslow_baseline(zero, ds_from(np.zeros(3), [1, 2, 3], [1, 1, 1]))
    assert np.max(np.abs(np.array(base) - [[1, 1 / 3], [2, 5 / 6], [3, 11 / 6]])) <= 1e-9
    assert abs(rmst(kaplan_meier([1, 2, 3], [1, 0, 1]), 3.0) - 7 / 3) <= 1e-9
    stat, _ = logrank_test(([1, 2], [1, 1]), ([3, 4], [1, 1]))
    assert abs(stat - 49 / 17) <= 1e-9 and round(stat, 2) == 2.88
    assert np.max(np.abs(bh_fdr([0.01, 0.02, 0.03]) - 0.03)) <= 1e-9


# ---------------------------------------------------------------- AC3


def test_ac3_newton_analytic_and_ascent(record_property):
    model = fit_newton(ds_from([1, 0, 1, 0], [1, 2, 3, 4], [1, 1, 1, 1]), ridge_alpha=1e-6)
    target = math.log((1 + math.sqrt(17)) / 2)
    record_property("beta", f"{model.beta[0]:.6f}")
    assert abs(model.beta[0] - target) <= 1e-4
    ds = generate_synthetic(SynthSpec(n_rows=2000, n_continuous=5, n_boolean=0, risk_kind="linear",
                                      beta=[0.9, -0.7, 0.4, 0.2, 0.0], seed=8))
    for ds_ in (ds, ds_from([1, 0, 1, 0], [1, 2, 3, 4], [1, 1, 1, 1])):
        gains = np.diff(fit_newton(ds_, ridge_alpha=1e-6).trace)
        assert np.all(gains[:-1] > 0) and gains[-1] >= 0


# ---------------------------------------------------------------- AC4


@pytest.fixture(scope="module")
def big_nonlinear():
    return generate_synthetic(SynthSpec(n_rows=50000, n_continuous=6, n_boolean=4, risk_kind="nonlinear", seed=1))


def test_ac4_objective_speedup(big_nonlinear, record_property):
    idx = build_risk_index(big_nonlinear.time, big_nonlinear.event)
    eta = np.random.default_rng(0).normal(size=big_nonlinear.n_rows)
    grad_hess(idx, eta)
    fast = min(_timed(grad_hess, idx, eta) for _ in range(5))
    slow = _timed(grad_hess_naive, idx, eta)
    record_property("fast_ms", f"{fast * 1e3:.1f}")
    record_property("speedup", f"{slow / fast:.0f}x")
    assert fast < 0.1
    assert slow / fast >= 50


def test_ac4_gbt_subquadratic(big_nonlinear, record_property):
    hp = gbt.GbtHyperparams(n_estimators=50, policy=gbt.LeafWise(7))
    small = subsample(big_nonlinear, 5000, 0)
    gbt.fit_gbt(small, hp)  # compile
    t_small = min(_timed(gbt.fit_gbt, small, hp) for _ in range(2))
    t_big = min(_timed(gbt.fit_gbt, big_nonlinear, hp) for _ in range(2))
    record_property("gbt_growth", f"{t_big / t_small:.1f}")
    assert t_big / t_small < 25


def _timed(fn, *args):
    t0 = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t0


# ---------------------------------------------------------------- AC5

RANKING_GRIDS = [
    GridSpec("CoxPlain"),
    GridSpec("CoxRidge"),
    GridSpec("GbtLeafWise", {"n_estimators": [100], "num_leaves": [7]}),
    GridSpec("Mlp", {"num_layers": [2], "layer_size": [64]}, {"batch_size": 512, "max_epochs": 100}),
]


def _per_fold_c(report):
    out = {}
    for f in report.folds:
        out.setdefault(f.model_kind, {})[f.outer_fold] = f.metrics.harrell_c if f.valid else math.nan
    return out


def test_ac5_nonlinear_ranking(record_property):
    spec = SynthSpec(n_rows=5000, n_continuous=6, n_boolean=4, risk_kind="nonlinear", seed=11)
    cfg = ExperimentConfig(synth=spec, grids=RANKING_GRIDS, outer_k=5, inner_k=3, seed=0)
    c = _per_fold_c(run_nested_cv(cfg))
    linear = [max(c["CoxPlain"][k], c["CoxRidge"][k]) for k in range(5)]
    wins = {m: sum(c[m][k] - linear[k] >= 0.05 for k in range(5)) for m in ("GbtLeafWise", "Mlp")}
    margins = {m: min(c[m][k] - linear[k] for k in range(5)) for m in wins}
    record_property("nonlinear_folds_won", wins)
    record_property("min_margin", {m: round(v, 3) for m, v in margins.items()})
    assert all(w >= 4 for w in wins.values())


def test_ac5_linear_penalized_cox_near_oracle(record_property):
    beta = [0.8, -0.6, 0.5, 0.4, -0.3, 0.0, 0.5, -0.4, 0.3, 0.0]
    spec = SynthSpec(n_rows=5000, n_continuous=6, n_boolean=4, risk_kind="linear", beta=beta, seed=12)
    ds = generate_synthetic(spec)
    cfg = ExperimentConfig(synth=spec, grids=RANKING_GRIDS, outer_k=5, inner_k=3, seed=0)
    c = _per_fold_c(run_nested_cv(cfg, ds))
    outer = make_folds(ds.n_rows, 5, cfg.seed)
    ok = 0
    gaps = []
    for k in range(5):
        te = outer.test_rows(k)
        oracle = harrell_c(ds.time[te], ds.event[te], ds.oracle_risk[te])
        best = max(c[m][k] for m in c)
        gap = max(abs(c["CoxRidge"][k] - oracle), best - c["CoxRidge"][k])
        gaps.append(round(gap, 4))
        ok += gap <= 0.02
    record_property("linear_folds_ok", ok)
    record_property("linear_gaps", gaps)
    assert ok >= 4


# ---------------------------------------------------------------- AC6

NULL_GRIDS = [
    GridSpec("CoxPlain"),
    GridSpec("CoxRidge", {"alpha": [0.01, 0.1]}),
    GridSpec("CoxLasso", {"alpha": [0.01]}),
    GridSpec("CoxElasticNet", {"alpha": [0.01], "l1_ratio": [0.5]}),
    GridSpec("Rsf", {"n_estimators": [50], "max_depth": [5]}),
    GridSpec("GbtLeafWise", {"n_estimators": [50], "num_leaves": [7]}),
    GridSpec("GbtDepthWise", {"n_estimators": [50], "max_depth": [3]}),
    GridSpec("Mlp", {"num_layers": [2], "layer_size": [16]}, {"batch_size": 512, "max_epochs": 50}),
]


def test_ac6_null_signal(record_property):
    spec = SynthSpec(n_rows=2000, n_continuous=6, n_boolean=4, risk_kind="nonlinear", seed=11)
    cfg = ExperimentConfig(synth=spec, permute_events=True, grids=NULL_GRIDS, outer_k=5, inner_k=5, seed=3)
    report = run_nested_cv(cfg)
    means = {m: float(np.mean(list(v.values()))) for m, v in _per_fold_c(report).items()}
    cmp = compare_models(report)["all"]
    ref = cmp["models"].index("CoxPlain")
    q_vs_plain = {m: cmp["q"][ref][i] for i, m in enumerate(cmp["models"]) if i != ref}
    record_property("mean_c", {m: round(v, 3) for m, v in means.items()})
    record_property("min_q", round(min(q_vs_plain.values()), 3))
    assert all(0.47 <= v <= 0.53 for v in means.values())
    assert all(q >= 0.05 for q in q_vs_plain.values())


# ---------------------------------------------------------------- AC7


def _cv_config(tmp_path):
    cfg = {
        "data": {"synthetic": {"n_rows": 400, "n_continuous": 4, "n_boolean": 2, "risk_kind": "nonlinear", "seed": 9}},
        "models": [{"model": "CoxPlain"}, {"model": "CoxElasticNet", "grid": {"alpha": [0.01, 0.1], "l1_ratio": [0.5, 1.0]}},
                   {"model": "GbtDepthWise", "grid": {"n_estimators": [10], "max_depth": [2, 3]}}],
        "cv": {"outer_k": 5, "inner_k": 5, "seed": 4},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_ac7_fit_count_exact(tmp_path, monkeypatch, record_property):
    cfg = harness.load_config(_cv_config(tmp_path))
    expected = sum(5 * 5 * len(g.points()) + 5 for g in cfg.grids)
    calls = []
    real = harness.fit_model
    monkeypatch.setattr(harness, "fit_model", lambda *a, **k: calls.append(1) or real(*a, **k))
    report = run_nested_cv(cfg)
    record_property("fits", f"{len(calls)}/{expected}")
    assert len(calls) == report.fit_count == harness.count_fits(cfg) == expected == 30 + 105 + 55


def test_ac7_leakage_marker(monkeypatch):
    ds = generate_synthetic(SynthSpec(n_rows=400, n_continuous=4, n_boolean=2, risk_kind="nonlinear", seed=9))
    cfg = ExperimentConfig(synth=SynthSpec(n_rows=400, n_continuous=4, n_boolean=2, risk_kind="nonlinear", seed=9),
                           grids=[GridSpec("CoxRidge", {"alpha": [0.01, 0.1]})], outer_k=5, inner_k=5, seed=4)
    outer = make_folds(ds.n_rows, 5, cfg.seed)

    def planted(fold, value):
        X = np.hstack([ds.X, np.zeros((ds.n_rows, 1))])
        X[outer.test_rows(fold), -1] = value
        X[outer.test_rows(fold), 0] += value
        return SurvivalDataset(X=X, columns=ds.columns + ["marker"], kinds=ds.kinds + [ColumnKind.CONTINUOUS],
                               time=ds.time, event=ds.event)

    def fingerprints(data):
        seen = []
        real = harness.fit_preprocessor
        monkeypatch.setattr(harness, "fit_preprocessor",
                            lambda tr, *a, **k: seen.append(tr.X.tobytes()) or _fp(real(tr, *a, **k), seen))
        run_nested_cv(cfg, data)
        monkeypatch.undo()
        return seen

    for fold in range(5):
        a, b = fingerprints(planted(fold, 0.0)), fingerprints(planted(fold, 99.0))
        assert a[2 * fold + 1] == b[2 * fold + 1]  # plan for this fold is bit-identical
        assert a[2 * fold] == b[2 * fold]  # and so are the rows it was fitted on


def _fp(result, seen):
    from survbench.preprocess import plan_fingerprint

    seen.append(plan_fingerprint(result[0]))
    return result


def test_ac7_cv_byte_identical(tmp_path):
    path = _cv_config(tmp_path)
    assert main(["cv", "--config", str(path), "--out", str(tmp_path / "r1")]) == 0
    assert main(["cv", "--config", str(path), "--out", str(tmp_path / "r2"), "--threads", "4"]) == 0
    names = sorted(p.name for p in (tmp_path / "r1").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "r2").iterdir())
    for name in names:
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_ac7_event_free_test_fold():
    spec = SynthSpec(n_rows=400, n_continuous=4, n_boolean=2, risk_kind="nonlinear", seed=9)
    ds = generate_synthetic(spec)
    cfg = ExperimentConfig(synth=spec, grids=[GridSpec("CoxPlain")], outer_k=5, inner_k=5, seed=4)
    event = ds.event.copy()
    event[make_folds(ds.n_rows, 5, cfg.seed).test_rows(3)] = 0
    report = run_nested_cv(cfg, SurvivalDataset(X=ds.X, columns=ds.columns, kinds=ds.kinds, time=ds.time, event=event))
    bad = [f for f in report.folds if not f.valid]
    assert [f.outer_fold for f in bad] == [3] and "no events" in bad[0].reason
    assert len(report.folds) == 5 and report.summary()["CoxPlain|all"]["harrell_c"]["k"] == 4


# ---------------------------------------------------------------- AC8


@pytest.mark.parametrize("seed", [101, 102, 103])
def test_ac8_variability_shrinks(seed, record_property):
    spec = SynthSpec(n_rows=50000, n_continuous=6, n_boolean=4, risk_kind="linear",
                     beta=[0.8, -0.6, 0.5, 0.4, -0.3, 0.0, 0.5, -0.4, 0.3, 0.0], seed=seed)
    cfg = ExperimentConfig(synth=spec, grids=[GridSpec("CoxPlain")], outer_k=5, inner_k=5, seed=seed)
    small, big = scaling_experiment(cfg, [5000, 50000])
    sd = [float(np.std([f.metrics.harrell_c for f in r.folds], ddof=1)) for r in (small, big)]
    record_property(f"sd_{seed}", f"{sd[0]:.4f}->{sd[1]:.4f}")
    assert sd[1] <= sd[0]


# ---------------------------------------------------------------- AC9


def test_ac9_metric_cross_checks():
    rng = np.random.default_rng(99)
    for k in range(200):
        n = int(rng.integers(2, 400))
        t, e = random_survival(rng, n, [None, 5][k % 2], float(rng.uniform(0, 0.8)))
        risk = rng.integers(0, [4, 1000][k % 2], size=n).astype(float)
        try:
            fast = harrell_c(t, e, risk)
        except UndefinedMetricError:
            continue
        assert fast == harrell_c(t, e, risk, method="naive")
        ones = np.ones(n, dtype=np.int8)
        assert abs(uno_c(t, ones, t, ones, risk, float(t.max()) + 1) - harrell_c(t, ones, risk)) <= 1e-12
    for k in range(30):
        n = int(rng.integers(20, 301))
        tt, te = random_survival(rng, n, 10, 0.4)
        t, e = random_survival(rng, n, 10, 0.4)
        risk = rng.normal(size=n).round(1)
        tau = float(np.quantile(t, 0.8))
        try:
            got = uno_c(tt, te, t, e, risk, tau)
        except UndefinedMetricError:
            continue
        assert abs(got - uno_oracle(tt, te, t, e, risk, tau)) <= 1e-12


# ---------------------------------------------------------------- AC10


def test_ac10_mlp_gradient_and_batch_invariance(record_property):
    worst = 0.0
    for train in (False, True):
        model, X, t, e = tiny_problem()
        eta, cache = forward(model, X, train=train)
        grads = backward(model, cache, cox_loss_and_grad(eta, t, e)[1], train=train)
        h = 1e-6
        for p, g in zip(model.params(), grads):
            flat, gflat = p.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = loss_of(model, X, t, e, train)
                flat[i] = old - h
                down = loss_of(model, X, t, e, train)
                flat[i] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), 1e-3))
    record_property("max_rel_err", f"{worst:.1e}")
    assert worst <= 1e-4
    model, X, *_ = tiny_problem(1, n=64)
    whole = predict(model, X)
    for size in (1, 7, 64):
        parts = np.concatenate([predict(model, X[i : i + size]) for i in range(0, len(X), size)])
        assert np.max(np.abs(parts - whole)) <= 1e-9
