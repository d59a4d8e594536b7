import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_survival
from survbench.metrics import (
    MetricReport,
    UndefinedMetricError,
    betainc,
    bh_fdr,
    chi2_1df_sf,
    delta_c,
    harrell_c,
    kaplan_meier,
    logrank_test,
    paired_t_test,
    rmst,
    student_t_sf2,
    top_fraction_metrics,
    uno_c,
)

# reference values computed once with scipy.special / scipy.stats and frozen
BETAINC_REF = [
    ((2.0, 3.0, 0.4), 0.5248),
    ((0.5, 0.5, 0.3), 0.36901011956554536),
    ((12.5, 0.5, 0.9), 0.10806237272416312),
]
T_SF2_REF = [((31.622776601683793, 4), 5.960208996599507e-06), ((1.0, 10), 0.34089313230206009)]


def test_harrell_anchors():
    assert harrell_c([1, 2, 3], [1, 1, 1], [3, 2, 1]) == 1.0
    assert harrell_c([1, 2, 3], [1, 1, 1], [1, 3, 2]) == pytest.approx(1 / 3)
    assert harrell_c([1, 2, 3, 4], [1, 0, 1, 0], [5, 5, 5, 5]) == 0.5
    with pytest.raises(UndefinedMetricError):
        harrell_c([1, 2], [0, 0], [1, 2])


def test_tied_time_event_before_censored():
    # at t=2 the event row is treated as earlier than the censored row
    assert harrell_c([2, 2], [1, 0], [1, 0]) == 1.0
    with pytest.raises(UndefinedMetricError):
        harrell_c([2, 2], [1, 1], [1, 0])


@st.composite
def scored(draw, max_n=80):
    n = draw(st.integers(2, max_n))
    rng = np.random.default_rng(draw(st.integers(0, 2**31 - 1)))
    time, event = random_survival(rng, n, draw(st.sampled_from([None, 4])), draw(st.sampled_from([0.0, 0.4, 0.8])))
    risk = rng.integers(0, draw(st.sampled_from([3, 1000])), size=n).astype(float)
    return time, event, risk


def _has_pairs(time, event):
    return any(event[i] and ((time > time[i]) | ((time == time[i]) & (event == 0))).any() for i in range(len(time)))


@given(scored())
def test_fast_equals_naive_exactly(inst):
    time, event, risk = inst
    if not _has_pairs(time, event):
        return
    assert harrell_c(time, event, risk, method="fast") == harrell_c(time, event, risk, method="naive")


@given(scored())
def test_harrell_symmetry_and_monotone_invariance(inst):
    time, event, risk = inst
    if not _has_pairs(time, event):
        return
    risk = risk + np.random.default_rng(0).random(len(risk)) * 1e-3  # break ties
    c = harrell_c(time, event, risk)
    assert c + harrell_c(time, event, -risk) == pytest.approx(1.0, abs=1e-12)
    assert harrell_c(time, event, np.exp(risk / 100)) == c


def uno_oracle(train_time, train_event, time, event, risk, tau):
    """Double loop with the censoring KM evaluated directly from its product."""
    def g_left(t):
        s = 1.0
        for u in np.unique(train_time[train_event == 0]):
            if u < t:
                at = np.sum(train_time >= u)
                d = np.sum((train_time == u) & (train_event == 0))
                s *= 1 - d / at
        return s

    num = den = 0.0
    for i in range(len(time)):
        if not event[i] or time[i] >= tau:
            continue
        w = g_left(time[i]) ** -2
        for j in range(len(time)):
            if time[j] > time[i] or (time[j] == time[i] and event[j] == 0):
                den += w
                num += w * (1.0 if risk[i] > risk[j] else 0.5 if risk[i] == risk[j] else 0.0)
    return num / den


@given(st.integers(0, 2**31 - 1), st.integers(20, 120))
def test_uno_matches_double_loop(seed, n):
    rng = np.random.default_rng(seed)
    tt, te = random_survival(rng, n, 8, 0.4)
    t, e = random_survival(rng, n, 8, 0.4)
    risk = rng.normal(size=n).round(1)
    tau = float(np.quantile(t, 0.8))
    try:
        got = uno_c(tt, te, t, e, risk, tau)
    except UndefinedMetricError:
        return
    assert got == pytest.approx(uno_oracle(tt, te, t, e, risk, tau), abs=1e-12)


@given(scored())
def test_uno_equals_harrell_without_censoring(inst):
    time, _, risk = inst
    event = np.ones(len(time), dtype=np.int8)
    tau = float(time.max()) + 1
    if not _has_pairs(time, event):
        return
    assert uno_c(time, event, time, event, risk, tau) == pytest.approx(harrell_c(time, event, risk), abs=1e-12)


def test_uno_perfect_ranking():
    assert uno_c([1, 2, 3], [1, 1, 1], [1, 2, 3], [1, 1, 1], [3, 2, 1], 10.0) == 1.0


def test_kaplan_meier_anchors():
    km = kaplan_meier([1, 2, 3], [1, 0, 1])
    assert np.allclose(km([1, 2, 3]), [2 / 3, 2 / 3, 0.0])
    assert np.all(kaplan_meier([1, 2], [0, 0])([0.5, 5]) == 1.0)
    assert kaplan_meier([1, 1, 1], [1, 1, 0])(1.0) == pytest.approx(1 / 3)


def test_rmst_anchors():
    assert rmst(kaplan_meier([1, 2, 3], [1, 0, 1]), 3.0) == pytest.approx(7 / 3, abs=1e-12)
    assert rmst(kaplan_meier([1, 2], [0, 0]), 4.0) == 4.0
    assert rmst(kaplan_meier([5, 6], [1, 1]), 2.0) == 2.0


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 5), st.floats(0.0, 5))
def test_rmst_monotone_and_bounded(seed, tau, extra):
    t, e = random_survival(np.random.default_rng(seed), 30)
    km = kaplan_meier(t, e)
    assert rmst(km, tau) <= tau + 1e-12
    assert rmst(km, tau) <= rmst(km, tau + extra) + 1e-12


def test_logrank_anchor_and_symmetry():
    a, b = ([1, 2], [1, 1]), ([3, 4], [1, 1])
    stat, p = logrank_test(a, b)
    assert stat == pytest.approx(49 / 17, abs=1e-9)
    assert p == pytest.approx(chi2_1df_sf(49 / 17))
    assert logrank_test(b, a)[0] == pytest.approx(stat, abs=1e-12)
    assert logrank_test(a, a) == (pytest.approx(0.0, abs=1e-12), pytest.approx(1.0))


@pytest.mark.parametrize("args,ref", BETAINC_REF)
def test_betainc_reference(args, ref):
    assert betainc(*args) == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("args,ref", T_SF2_REF)
def test_t_tail_reference(args, ref):
    assert student_t_sf2(*args) == pytest.approx(ref, rel=1e-8)


def test_chi2_tail_known_quantile():
    assert chi2_1df_sf(3.841458820694124) == pytest.approx(0.05, abs=1e-12)


def test_top_fraction_examples():
    risk = np.arange(1, 11, dtype=float)
    time = np.arange(10, 0, -1, dtype=float)
    event = np.zeros(10, dtype=np.int8)
    event[8:] = 1
    g = top_fraction_metrics(time, event, risk, 0.2, tau=5.0)
    assert (g.sensitivity, g.specificity, g.fpr, g.fnr) == (1.0, 1.0, 0.0, 0.0)
    g2 = top_fraction_metrics([1, 2, 3, 4], [1, 1, 1, 1], [1, 1, 0, 0], 0.5, tau=4.0)
    assert g2.delta_rmst == pytest.approx(-2.0, abs=1e-12)


def test_top_fraction_ties_enter_top_group():
    g = top_fraction_metrics([1, 2, 3, 4, 5], [1, 0, 1, 0, 1], [5, 4, 4, 1, 0], 0.2, tau=5.0)
    assert g.n_top == 1
    g = top_fraction_metrics([1, 2, 3, 4, 5], [1, 0, 1, 0, 1], [4, 4, 4, 1, 0], 0.2, tau=5.0)
    assert g.n_top == 3


def test_top_fraction_null_hazard_ratio_near_one():
    rng = np.random.default_rng(3)
    t, e = random_survival(rng, 5000)
    g = top_fraction_metrics(t, e, rng.normal(size=5000), 0.2, tau=float(np.quantile(t, 0.95)))
    assert 0.85 < g.hazard_ratio < 1.15


def test_delta_c_examples():
    assert delta_c(0.8, 0.7) == pytest.approx(0.1)
    assert delta_c(0.7, 0.7) == 0.0
    assert delta_c(0.6, 0.7) == pytest.approx(-0.1)


def test_paired_t_examples():
    assert paired_t_test([1, 2, 3], [1, 2, 3]) == (0.0, 1.0)
    t, p = paired_t_test([1, -1, 0], [0, 0, 0])
    assert t == 0.0 and p == pytest.approx(1.0)
    t, p = paired_t_test([1, 1.1, 0.9, 1.0, 1.0], [0, 0, 0, 0, 0])
    assert t == pytest.approx(31.622776601683793) and p < 0.01
    assert p == pytest.approx(5.960208996599507e-06, rel=1e-8)
    assert paired_t_test([1, 1, 1], [0, 0, 0])[1] == 0.0
    with pytest.raises(ValueError):
        paired_t_test([1], [0])


def test_bh_examples():
    assert np.allclose(bh_fdr([0.01, 0.02, 0.03]), [0.03, 0.03, 0.03], atol=1e-12)
    assert np.allclose(bh_fdr([0.2]), [0.2])
    assert np.all(bh_fdr([1, 1, 1]) == 1.0)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_bh_properties(ps):
    q = bh_fdr(ps)
    assert np.all(q >= np.asarray(ps) - 1e-15) and np.all(q <= 1.0)
    order = np.argsort(ps, kind="stable")
    assert np.all(np.diff(q[order]) >= -1e-15)


def test_metric_report_flat_keys():
    rep = MetricReport(harrell_c=0.7, uno_c=0.69, delta_c=0.01, group={}, harrell_c_train=0.71, tau=3.0)
    assert set(rep.flat()) == {"harrell_c", "uno_c", "delta_c", "harrell_c_train", "tau"}
