"""Second-order gradient-boosted trees on the Cox partial likelihood.

One learner covers both growth styles: ``LeafWise`` expands the frontier
leaf with the largest gain until a leaf budget is reached, ``DepthWise``
splits every eligible node level by level up to a depth cap.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .cox_objective import build_risk_index, grad_hess


@dataclass(frozen=True)
class LeafWise:
    num_leaves: int

    def __post_init__(self):
        if self.num_leaves < 2:
            raise ValueError("num_leaves must be >= 2")

    @property
    def leaf_budget(self) -> int:
        return self.num_leaves


@dataclass(frozen=True)
class DepthWise:
    max_depth: int

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")

    @property
    def leaf_budget(self) -> int:
        return 2 ** self.max_depth - 1


@dataclass
class GbtHyperparams:
    n_estimators: int = 100
    policy: LeafWise | DepthWise = field(default_factory=lambda: LeafWise(7))
    learning_rate: float = 0.1
    min_leaf: int = 10
    lambda_l2: float = 1.0
    seed: int = 42

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")


@dataclass
class Tree:
    """Flat binary tree. ``feature[i] == -1`` marks a leaf; rows with
    ``x[feature] <= threshold`` go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return self.value[node]

    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
        )


def split_gain(GL, HL, GR, HR, lam):
    G, H = GL + GR, HL + HR
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam))


@dataclass
class _Node:
    sorted_rows: np.ndarray  # (p, m): node rows, sorted by each feature
    G: float
    H: float
    depth: int
    gain: float = -np.inf
    feature: int = -1
    threshold: float = 0.0
    n_left: int = 0


def _best_split(node: _Node, X, g, h, min_leaf, lam):
    S = node.sorted_rows
    p, m = S.shape
    if p == 0 or m < 2 * min_leaf:
        return
    vals = np.take_along_axis(X.T, S, axis=1) if p else None
    GL = np.cumsum(g[S], axis=1)[:, :-1]
    HL = np.cumsum(h[S], axis=1)[:, :-1]
    GR = node.G - GL
    HR = node.H - HL
    gain = split_gain(GL, HL, GR, HR, lam)
    n_left = np.arange(1, m)
    ok = (vals[:, :-1] < vals[:, 1:]) & (n_left >= min_leaf) & (m - n_left >= min_leaf)
    gain = np.where(ok, gain, -np.inf)
    # ties: lowest feature index, then lowest threshold (row-major argmax)
    flat = int(np.argmax(gain))
    f, k = divmod(flat, m - 1)
    best = gain[f, k]
    if not np.isfinite(best):
        return
    lo, hi = vals[f, k], vals[f, k + 1]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    node.gain, node.feature, node.threshold, node.n_left = float(best), int(f), float(thr), k + 1


class _Builder:
    def __init__(self, X, g, h, min_leaf, lam):
        self.X, self.g, self.h = X, g, h
        self.min_leaf, self.lam = min_leaf, lam
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []
        self.mask = np.zeros(len(X), dtype=bool)

    def add(self, node: _Node) -> int:
        nid = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(-node.G / (node.H + self.lam))
        _best_split(node, self.X, self.g, self.h, self.min_leaf, self.lam)
        return nid

    def split(self, nid: int, node: _Node):
        S = node.sorted_rows
        rows = S[node.feature, : node.n_left]
        self.mask[rows] = True
        sel = self.mask[S]
        self.mask[rows] = False
        p = S.shape[0]
        left_rows = S[sel].reshape(p, node.n_left)
        right_rows = S[~sel].reshape(p, S.shape[1] - node.n_left)
        lr, rr = left_rows[0], right_rows[0]
        children = []
        for r, sr in ((lr, left_rows), (rr, right_rows)):
            child = _Node(sorted_rows=sr, G=float(self.g[r].sum()), H=float(self.h[r].sum()), depth=node.depth + 1)
            children.append((self.add(child), child))
        self.feature[nid] = node.feature
        self.threshold[nid] = node.threshold
        self.left[nid], self.right[nid] = children[0][0], children[1][0]
        return children

    def tree(self) -> Tree:
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=float),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=np.asarray(self.value, dtype=float),
        )


def presort(X: np.ndarray) -> np.ndarray:
    """Row indices sorted by each feature, shape (p, n)."""
    return np.argsort(X, axis=0, kind="stable").T.copy()


def grow_tree(g, h, X, policy, min_leaf: int = 10, lambda_l2: float = 1.0, seed: int = 0, sorted_rows=None) -> Tree:
    """Grow one regression tree on first/second-order statistics.

    Leaf values are ``-G/(H + lambda)``; a split is taken only if its gain is
    strictly positive and both children keep ``min_leaf`` rows. The search is
    exhaustive and deterministic, so ``seed`` is accepted for interface
    symmetry only.
    """
    X = np.asarray(X, dtype=float)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if not len(g) == len(h) == len(X):
        raise ValueError("g, h and X must have the same number of rows")
    if sorted_rows is None:
        sorted_rows = presort(X)
    b = _Builder(X, g, h, min_leaf, lambda_l2)
    root = _Node(sorted_rows=sorted_rows, G=float(g.sum()), H=float(h.sum()), depth=0)
    root_id = b.add(root)

    if isinstance(policy, LeafWise):
        heap = [(-root.gain, root_id, root)]
        n_leaves = 1
        while heap and n_leaves < policy.num_leaves:
            neg_gain, nid, node = heapq.heappop(heap)
            if not -neg_gain > 0:
                break
            for cid, child in b.split(nid, node):
                heapq.heappush(heap, (-child.gain, cid, child))
            n_leaves += 1
    elif isinstance(policy, DepthWise):
        level = [(root_id, root)]
        for _ in range(policy.max_depth):
            nxt = []
            for nid, node in level:
                if node.gain > 0:
                    nxt.extend(b.split(nid, node))
            level = nxt
            if not level:
                break
    else:
        raise TypeError(f"unknown growth policy {policy!r}")
    return b.tree()


@dataclass
class GbtModel:
    trees: list[Tree]
    learning_rate: float
    feature_names: list[str]
    train_loss: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "kind": "gbt",
            "learning_rate": self.learning_rate,
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            learning_rate=float(d["learning_rate"]),
            feature_names=list(d["feature_names"]),
        )


def fit_gbt(ds, hp: GbtHyperparams) -> GbtModel:
    X = np.asarray(ds.X, dtype=float)
    if np.isnan(X).any():
        raise ValueError("features contain missing values; preprocess first")
    if hp.min_leaf > len(X):
        raise ValueError(f"min_leaf={hp.min_leaf} exceeds the {len(X)} training rows")
    idx = build_risk_index(ds.time, ds.event)
    sorted_rows = presort(X)
    eta = np.zeros(len(X))
    trees, losses = [], []
    for _ in range(hp.n_estimators):
        out = grad_hess(idx, eta)
        losses.append(out.loss)
        tree = grow_tree(-out.grad, out.hess, X, hp.policy, hp.min_leaf, hp.lambda_l2, hp.seed, sorted_rows)
        eta = eta + hp.learning_rate * tree.predict(X)
        trees.append(tree)
    losses.append(grad_hess(idx, eta).loss)
    return GbtModel(trees=trees, learning_rate=hp.learning_rate, feature_names=list(ds.columns), train_loss=losses)


def predict(model: GbtModel, X) -> np.ndarray:
    if hasattr(X, "columns"):
        if list(X.columns) != list(model.feature_names):
            raise ValueError("feature mismatch between model and data")
        X = X.X
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or (len(X) and X.shape[1] != len(model.feature_names)):
        raise ValueError(f"expected {len(model.feature_names)} feature columns, got shape {X.shape}")
    eta = np.zeros(len(X))
    for tree in model.trees:
        eta += model.learning_rate * tree.predict(X)
    return eta
