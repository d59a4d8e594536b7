"""Random survival forest: log-rank splitting, Nelson-Aalen leaves and
ensemble-mortality risk scores."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit


@dataclass
class RsfHyperparams:
    n_estimators: int = 100
    max_depth: int = 7
    min_node_size: int = 20
    mtry: int | None = None  # default ceil(sqrt(p))
    bootstrap: bool = True
    seed: int = 42

    def __post_init__(self):
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")


def _logrank_terms(y, yl, d, dl):
    """Observed-minus-expected and variance for the left group, summed
    over event times. Arrays broadcast over leading axes."""
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(y > 0, yl / y, 0.0)
        o_minus_e = (dl - d * frac).sum(axis=-1)
        var_t = np.where(y > 1, d * frac * (1 - frac) * (y - d) / (y - 1), 0.0)
    return o_minus_e, var_t.sum(axis=-1)


def logrank_split_statistic(left, right) -> float:
    """Squared standardised log-rank statistic ``(O - E)^2 / V`` for a split.

    ``left`` and ``right`` are ``(times, events)`` pairs. Zero variance gives 0.
    """
    tl, el = (np.asarray(a, dtype=float) for a in left)
    tr, er = (np.asarray(a, dtype=float) for a in right)
    if len(tl) == 0 or len(tr) == 0:
        raise ValueError("both sides of a split must be non-empty")
    times = np.concatenate([tl, tr])
    events = np.concatenate([el, er])
    grid = np.unique(times[events == 1])
    if grid.size == 0:
        return 0.0
    y = (times[:, None] >= grid).sum(axis=0).astype(float)
    yl = (tl[:, None] >= grid).sum(axis=0).astype(float)
    d = ((times[:, None] == grid) & (events[:, None] == 1)).sum(axis=0).astype(float)
    dl = ((tl[:, None] == grid) & (el[:, None] == 1)).sum(axis=0).astype(float)
    ome, var = _logrank_terms(y, yl, d, dl)
    return float(ome * ome / var) if var > 0 else 0.0


def nelson_aalen(time, event) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative hazard ``H(t) = sum_{t_i <= t} d_i / n_i`` at distinct event times."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    grid = np.unique(time[event == 1])
    if grid.size == 0:
        return grid, grid.copy()
    ts = np.sort(time)
    at_risk = len(ts) - np.searchsorted(ts, grid, side="left")
    d = np.bincount(np.searchsorted(grid, time[event == 1]), minlength=len(grid))
    return grid, np.cumsum(d / at_risk)


def step_eval(times: np.ndarray, values: np.ndarray, at: np.ndarray) -> np.ndarray:
    """Right-continuous step function (0 before the first step) evaluated at ``at``."""
    pos = np.searchsorted(times, at, side="right")
    padded = np.concatenate([[0.0], values])
    return padded[pos]


@dataclass
class SurvivalTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_times: list  # per node; empty for internal nodes
    leaf_chf: list
    leaf_mortality: np.ndarray  # per node; nan for internal nodes

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf_times": [np.asarray(t).tolist() for t in self.leaf_times],
            "leaf_chf": [np.asarray(c).tolist() for c in self.leaf_chf],
            "leaf_mortality": [None if math.isnan(v) else float(v) for v in self.leaf_mortality],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurvivalTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            leaf_times=[np.asarray(t, dtype=float) for t in d["leaf_times"]],
            leaf_chf=[np.asarray(c, dtype=float) for c in d["leaf_chf"]],
            leaf_mortality=np.asarray(
                [math.nan if v is None else v for v in d["leaf_mortality"]], dtype=float
            ),
        )


@dataclass
class RsfModel:
    trees: list[SurvivalTree]
    event_time_grid: np.ndarray
    feature_names: list[str]
    hyperparams: RsfHyperparams | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "kind": "rsf",
            "feature_names": list(self.feature_names),
            "event_time_grid": self.event_time_grid.tolist(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RsfModel":
        return cls(
            trees=[SurvivalTree.from_dict(t) for t in d["trees"]],
            event_time_grid=np.asarray(d["event_time_grid"], dtype=float),
            feature_names=list(d["feature_names"]),
        )


@njit(cache=True)
def _logrank_scan(pos, ev, hcum, ccum, dcum, valid):
    """Log-rank statistic for every prefix of ``pos`` (rows in feature order).

    ``pos[r]`` counts node event times <= t_r. With ``yl_t`` the left at-risk
    count, O - E = sum_L (d_r - hcum[pos_r]) and
    V = sum_t c_t yl_t - sum_t (c_t / y_t) yl_t^2, where the squared term is
    a sum over left pairs of ``dcum[min(pos_r, pos_s)]``, accumulated with a
    Fenwick tree keyed on ``pos``.
    """
    m = pos.shape[0]
    size = dcum.shape[0]
    cnt = np.zeros(size + 1)
    sm = np.zeros(size + 1)
    total = 0.0
    ome = 0.0
    lin = 0.0
    quad = 0.0
    out = np.zeros(m - 1)
    for k in range(m - 1):
        q = pos[k]
        # rows already in the left group with pos < q, via prefix sums over [0, q)
        c_lt = 0.0
        s_lt = 0.0
        i = q
        while i > 0:
            c_lt += cnt[i]
            s_lt += sm[i]
            i -= i & (-i)
        n_prev = k
        quad += dcum[q] + 2.0 * (s_lt + dcum[q] * (n_prev - c_lt))
        i = q + 1
        while i <= size:
            cnt[i] += 1.0
            sm[i] += dcum[q]
            i += i & (-i)
        ome += ev[k] - hcum[q]
        lin += ccum[q]
        if valid[k]:
            var = lin - quad
            if var > 1e-12:
                out[k] = ome * ome / var
    return out


def _best_logrank_split(Xn, tn, en, features, min_node_size):
    """Best (statistic, feature, threshold) over candidate midpoints."""
    m = len(tn)
    grid = np.unique(tn[en == 1])
    if grid.size == 0 or m < 2 * min_node_size:
        return 0.0, -1, 0.0
    T = len(grid)
    pos = np.searchsorted(grid, tn, side="right")
    y = np.bincount(pos, minlength=T + 1)[::-1].cumsum()[::-1][1:].astype(float)
    d = np.bincount(np.searchsorted(grid, tn[en == 1]), minlength=T).astype(float)
    c = np.where(y > 1, d * (y - d) / (y * np.maximum(y - 1, 1)), 0.0)
    hcum = np.concatenate([[0.0], np.cumsum(d / y)])
    ccum = np.concatenate([[0.0], np.cumsum(c)])
    dcum = np.concatenate([[0.0], np.cumsum(c / y)])
    ev = en.astype(float)

    best = (0.0, -1, 0.0)
    n_left = np.arange(1, m)
    for f in features:
        order = np.argsort(Xn[:, f], kind="stable")
        xs = Xn[order, f]
        ok = (xs[:-1] < xs[1:]) & (n_left >= min_node_size) & (m - n_left >= min_node_size)
        if not ok.any():
            continue
        stat = _logrank_scan(pos[order], ev[order], hcum, ccum, dcum, ok)
        k = int(np.argmax(stat))
        if stat[k] > best[0]:
            best = (float(stat[k]), int(f), 0.5 * (xs[k] + xs[k + 1]))
    return best


def _grow_survival_tree(X, time, event, hp: RsfHyperparams, mtry: int, rng, grid) -> SurvivalTree:
    feature, threshold, left, right = [], [], [], []
    leaf_times, leaf_chf, leaf_mort = [], [], []
    p = X.shape[1]

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1)):
            lst.append(v)
        leaf_times.append(np.empty(0))
        leaf_chf.append(np.empty(0))
        leaf_mort.append(math.nan)
        return len(feature) - 1

    def make_leaf(nid, rows):
        t, h = nelson_aalen(time[rows], event[rows])
        leaf_times[nid], leaf_chf[nid] = t, h
        leaf_mort[nid] = float(step_eval(t, h, grid).sum())

    stack = [(new_node(), np.arange(len(time)), 0)]
    while stack:
        nid, rows, depth = stack.pop()
        if depth >= hp.max_depth:
            make_leaf(nid, rows)
            continue
        feats = np.sort(rng.choice(p, size=mtry, replace=False))
        stat, f, thr = _best_logrank_split(X[rows], time[rows], event[rows], feats, hp.min_node_size)
        if f < 0 or not stat > 0:
            make_leaf(nid, rows)
            continue
        go_left = X[rows, f] <= thr
        lid, rid = new_node(), new_node()
        feature[nid], threshold[nid], left[nid], right[nid] = f, thr, lid, rid
        stack.append((rid, rows[~go_left], depth + 1))
        stack.append((lid, rows[go_left], depth + 1))
    return SurvivalTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        leaf_times=leaf_times,
        leaf_chf=leaf_chf,
        leaf_mortality=np.asarray(leaf_mort, dtype=float),
    )


def fit_rsf(ds, hp: RsfHyperparams) -> RsfModel:
    """Grow ``hp.n_estimators`` log-rank survival trees.

    Tree ``k`` draws its bootstrap sample and feature subsets from
    ``default_rng(seed + k)``, so the forest does not depend on the order in
    which trees are grown.
    """
    X = np.asarray(ds.X, dtype=float)
    if np.isnan(X).any():
        raise ValueError("features contain missing values; preprocess first")
    time = np.asarray(ds.time, dtype=float)
    event = np.asarray(ds.event)
    if not event.any():
        raise ValueError("no events in training data")
    p = X.shape[1]
    mtry = hp.mtry if hp.mtry is not None else max(1, math.ceil(math.sqrt(p)))
    if not 1 <= mtry <= max(p, 1):
        raise ValueError(f"mtry={mtry} must lie in [1, {p}]")
    grid = np.unique(time[event == 1])
    n = len(time)
    trees = []
    for k in range(hp.n_estimators):
        rng = np.random.default_rng(hp.seed + k)
        rows = rng.integers(0, n, size=n) if hp.bootstrap else np.arange(n)
        trees.append(_grow_survival_tree(X[rows], time[rows], event[rows], hp, mtry, rng, grid))
    return RsfModel(trees=trees, event_time_grid=grid, feature_names=list(ds.columns), hyperparams=hp)


def predict_mortality(model: RsfModel, X) -> np.ndarray:
    """Ensemble cumulative hazard summed over the training event-time grid."""
    if hasattr(X, "columns"):
        if list(X.columns) != list(model.feature_names):
            raise ValueError("feature mismatch between model and data")
        X = X.X
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or (len(X) and X.shape[1] != len(model.feature_names)):
        raise ValueError(f"expected {len(model.feature_names)} feature columns, got shape {X.shape}")
    total = np.zeros(len(X))
    for tree in model.trees:
        total += tree.leaf_mortality[tree.apply(X)]
    return total / len(model.trees)


def ensemble_chf(model: RsfModel, X) -> np.ndarray:
    """Average leaf cumulative hazard on ``event_time_grid``, shape (n, T)."""
    X = np.asarray(getattr(X, "X", X), dtype=float)
    out = np.zeros((len(X), len(model.event_time_grid)))
    for tree in model.trees:
        leaves = tree.apply(X)
        for leaf in np.unique(leaves):
            out[leaves == leaf] += step_eval(tree.leaf_times[leaf], tree.leaf_chf[leaf], model.event_time_grid)
    return out / len(model.trees)
