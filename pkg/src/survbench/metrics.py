"""Discrimination metrics for right-censored data.

Concordance, Kaplan-Meier, RMST, log-rank, top-risk-group metrics and the
paired-test / FDR machinery used to compare models across folds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .cox_linear import ConvergenceError, fit_newton


class UndefinedMetricError(ValueError):
    pass


# --------------------------------------------------------------------------
# concordance


@njit(cache=True)
def _concordance_scan(order, time, event, rank, n_ranks):
    """Per-row (lower, tied, comparable) counts for event rows.

    Rows are visited by descending time; a Fenwick tree over risk ranks holds
    every row with a strictly later time plus censored rows sharing the time.
    """
    n = order.shape[0]
    tree = np.zeros(n_ranks + 1, dtype=np.int64)
    lower = np.zeros(n, dtype=np.int64)
    tied = np.zeros(n, dtype=np.int64)
    comparable = np.zeros(n, dtype=np.int64)
    inserted = 0
    start = 0
    while start < n:
        end = start
        t = time[order[start]]
        while end < n and time[order[end]] == t:
            end += 1
        for k in range(start, end):
            i = order[k]
            if event[i] == 0:
                j = rank[i] + 1
                while j <= n_ranks:
                    tree[j] += 1
                    j += j & (-j)
                inserted += 1
        for k in range(start, end):
            i = order[k]
            if event[i] == 1:
                below = 0
                j = rank[i]
                while j > 0:
                    below += tree[j]
                    j -= j & (-j)
                upto = 0
                j = rank[i] + 1
                while j > 0:
                    upto += tree[j]
                    j -= j & (-j)
                lower[i] = below
                tied[i] = upto - below
                comparable[i] = inserted
        for k in range(start, end):
            i = order[k]
            if event[i] == 1:
                j = rank[i] + 1
                while j <= n_ranks:
                    tree[j] += 1
                    j += j & (-j)
                inserted += 1
        start = end
    return lower, tied, comparable


def _pair_counts_fast(time, event, risk):
    order = np.argsort(-time, kind="stable")
    uniq, rank = np.unique(risk, return_inverse=True)
    return _concordance_scan(order, time, event.astype(np.int64), rank.astype(np.int64), len(uniq))


def _pair_counts_naive(time, event, risk, chunk=512):
    n = len(time)
    lower = np.zeros(n, dtype=np.int64)
    tied = np.zeros(n, dtype=np.int64)
    comparable = np.zeros(n, dtype=np.int64)
    ev_rows = np.flatnonzero(event == 1)
    for s in range(0, len(ev_rows), chunk):
        rows = ev_rows[s : s + chunk]
        ti, ri = time[rows, None], risk[rows, None]
        comp = (time[None, :] > ti) | ((time[None, :] == ti) & (event[None, :] == 0))
        lower[rows] = (comp & (risk[None, :] < ri)).sum(axis=1)
        tied[rows] = (comp & (risk[None, :] == ri)).sum(axis=1)
        comparable[rows] = comp.sum(axis=1)
    return lower, tied, comparable


def _validate(time, event, risk):
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(np.int64)
    risk = np.asarray(risk, dtype=float)
    if not len(time) == len(event) == len(risk):
        raise ValueError("time, event and risk must have equal lengths")
    if not np.all(np.isfinite(risk)):
        raise ValueError("risk scores must be finite")
    return time, event, risk


def harrell_c(time, event, risk, method: str = "fast") -> float:
    """Harrell's concordance index; higher risk should mean earlier events.

    A pair (i, j) is comparable when row i has an event and either
    ``t_i < t_j`` or the times tie and row j is censored. Tied risks score 1/2.
    ``method="naive"`` uses the O(n^2) pair enumeration.
    """
    time, event, risk = _validate(time, event, risk)
    counts = _pair_counts_fast if method == "fast" else _pair_counts_naive
    lower, tied, comparable = counts(time, event, risk)
    pairs = int(comparable.sum())
    if pairs == 0:
        raise UndefinedMetricError("C undefined: no comparable pairs")
    return (2 * int(lower.sum()) + int(tied.sum())) / (2 * pairs)


@dataclass
class KmCurve:
    """Survival steps; ``surv[k]`` holds on ``[times[k], times[k+1])`` and
    ``S = 1`` before ``times[0]``."""

    times: np.ndarray
    surv: np.ndarray
    at_risk: np.ndarray = field(repr=False)
    events: np.ndarray = field(repr=False)

    def __call__(self, t) -> np.ndarray:
        pos = np.searchsorted(self.times, t, side="right")
        return np.concatenate([[1.0], self.surv])[pos]

    def left_limit(self, t) -> np.ndarray:
        """``S(t-)``: survival just before ``t``."""
        pos = np.searchsorted(self.times, t, side="left")
        return np.concatenate([[1.0], self.surv])[pos]


def kaplan_meier(time, event) -> KmCurve:
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    if len(time) == 0:
        raise ValueError("empty input")
    grid = np.unique(time[event == 1])
    ts = np.sort(time)
    at_risk = len(ts) - np.searchsorted(ts, grid, side="left")
    d = np.bincount(np.searchsorted(grid, time[event == 1]), minlength=len(grid))
    surv = np.cumprod(1.0 - d / at_risk)
    return KmCurve(times=grid, surv=surv, at_risk=at_risk, events=d)


def rmst(curve: KmCurve, tau: float) -> float:
    """Area under the KM curve on ``[0, tau]``."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    knots = np.concatenate([[0.0], curve.times[curve.times < tau], [tau]])
    levels = np.concatenate([[1.0], curve.surv[curve.times < tau]])
    return float(np.sum(levels * np.diff(knots)))


def uno_c(train_time, train_event, test_time, test_event, test_risk, tau: float) -> float:
    """Uno's IPCW concordance truncated at ``tau``.

    The censoring distribution ``G`` is the KM estimate on the training data
    with the event indicator flipped; each comparable pair with ``t_i < tau``
    is weighted by ``G(t_i-)^-2``.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    time, event, risk = _validate(test_time, test_event, test_risk)
    cens = kaplan_meier(np.asarray(train_time, dtype=float), 1 - np.asarray(train_event))
    lower, tied, comparable = _pair_counts_fast(time, event, risk)
    use = (event == 1) & (time < tau) & (comparable > 0)
    g = cens.left_limit(time[use])
    if np.any(g <= 0):
        raise UndefinedMetricError("censoring survival reaches 0 before tau; choose a smaller tau")
    w = 1.0 / (g * g)
    den = float(np.sum(w * comparable[use]))
    if den == 0:
        raise UndefinedMetricError("C undefined: no comparable pairs before tau")
    return float(np.sum(w * (lower[use] + 0.5 * tied[use])) / den)


def default_tau(time, q: float = 0.95) -> float:
    return float(np.quantile(np.asarray(time, dtype=float), q))


# --------------------------------------------------------------------------
# distributions


def _betacf(a, b, x):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 1000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability ``P(|T| >= |t|)``."""
    if math.isinf(t):
        return 0.0
    return betainc(0.5 * df, 0.5, df / (df + t * t))


def chi2_1df_sf(x: float) -> float:
    return math.erfc(math.sqrt(max(x, 0.0) / 2.0))


# --------------------------------------------------------------------------
# group comparisons


def logrank_test(group_a, group_b) -> tuple[float, float]:
    """Two-sample log-rank chi-square (1 df) and its p-value."""
    ta, ea = (np.asarray(v, dtype=float) for v in group_a)
    tb, eb = (np.asarray(v, dtype=float) for v in group_b)
    if len(ta) == 0 or len(tb) == 0:
        raise ValueError("both groups must be non-empty")
    t = np.concatenate([ta, tb])
    e = np.concatenate([ea, eb])
    grid = np.unique(t[e == 1])
    o_minus_e = var = 0.0
    for s in grid:
        n = np.sum(t >= s)
        na = np.sum(ta >= s)
        d = np.sum((t == s) & (e == 1))
        da = np.sum((ta == s) & (ea == 1))
        o_minus_e += da - d * na / n
        if n > 1:
            var += d * (na / n) * (1 - na / n) * (n - d) / (n - 1)
    if var <= 0:
        return 0.0, 1.0
    stat = o_minus_e**2 / var
    return float(stat), chi2_1df_sf(stat)


@dataclass
class GroupMetrics:
    fraction: float
    sensitivity: float
    specificity: float
    fpr: float
    fnr: float
    hazard_ratio: float
    delta_rmst: float
    logrank_p: float
    n_top: int = 0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def top_fraction_metrics(time, event, risk, fraction: float, tau: float) -> GroupMetrics:
    """Metrics for the highest-risk ``fraction`` of rows versus the rest.

    The threshold is the ``k``-th largest risk with ``k = round(fraction * n)``
    (at least 1); every row reaching it, ties included, is in the top group.
    Positives are rows with an observed event.
    """
    time, event, risk = _validate(time, event, risk)
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    k = max(1, int(round(fraction * len(risk))))
    thr = np.sort(risk)[len(risk) - k]
    top = risk >= thr
    if top.all() or not top.any():
        raise UndefinedMetricError("top group or remainder is empty")
    pos = event == 1
    tp = int(np.sum(top & pos))
    fn = int(np.sum(~top & pos))
    tn = int(np.sum(~top & ~pos))
    fp = int(np.sum(top & ~pos))
    sens = tp / (tp + fn) if tp + fn else math.nan
    spec = tn / (tn + fp) if tn + fp else math.nan

    from .dataset import ColumnKind, SurvivalDataset

    hr = math.nan
    if pos.any():
        ind = SurvivalDataset(
            X=top.astype(float)[:, None], columns=["top"], kinds=[ColumnKind.BOOLEAN], time=time, event=event
        )
        try:
            beta = fit_newton(ind, max_iter=200).beta[0]
        except ConvergenceError as exc:
            beta = exc.beta[0]
        hr = math.exp(beta)
    d_rmst = rmst(kaplan_meier(time[top], event[top]), tau) - rmst(kaplan_meier(time[~top], event[~top]), tau)
    _, p = logrank_test((time[top], event[top]), (time[~top], event[~top]))
    return GroupMetrics(
        fraction=fraction,
        sensitivity=sens,
        specificity=spec,
        fpr=1.0 - spec,
        fnr=1.0 - sens,
        hazard_ratio=hr,
        delta_rmst=d_rmst,
        logrank_p=p,
        n_top=int(top.sum()),
    )


def delta_c(c_train: float, c_test: float) -> float:
    for c in (c_train, c_test):
        if not 0.0 <= c <= 1.0:
            raise ValueError("concordance values must lie in [0, 1]")
    return c_train - c_test


@dataclass
class MetricReport:
    harrell_c: float
    uno_c: float
    delta_c: float
    group: dict[float, GroupMetrics]
    fit_time_seconds: float = 0.0
    harrell_c_train: float = math.nan
    tau: float = math.nan

    def flat(self) -> dict[str, float]:
        """Deterministic metrics as ``name -> value`` (fit time excluded)."""
        out = {"harrell_c": self.harrell_c, "uno_c": self.uno_c, "delta_c": self.delta_c,
               "harrell_c_train": self.harrell_c_train, "tau": self.tau}
        for frac, g in sorted(self.group.items()):
            tag = f"top{int(round(frac * 100))}"
            for k in ("sensitivity", "specificity", "fpr", "fnr", "hazard_ratio", "delta_rmst", "logrank_p"):
                out[f"{tag}_{k}"] = getattr(g, k)
        return out


# --------------------------------------------------------------------------
# model comparison


def paired_t_test(a, b) -> tuple[float, float]:
    """Paired two-sided t-test on ``a - b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) != len(b) or len(a) < 2:
        raise ValueError("need two paired samples of equal length >= 2")
    diff = a - b
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(len(diff)))
    return t, student_t_sf2(t, len(diff) - 1)


def bh_fdr(p_values) -> np.ndarray:
    """Benjamini-Hochberg adjusted q-values in input order."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return p.copy()
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    q = np.empty(m)
    q[order] = np.minimum(q_sorted, 1.0)
    return q
