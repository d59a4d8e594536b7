"""Feed-forward Cox network in numpy.

Each hidden block is dense -> batch norm -> ReLU -> dropout; a bias-free
linear layer maps the last block to a scalar log-risk. Training minimises the
negative mean partial log-likelihood of each mini-batch with Adam and cuts the
learning rate by 10x when the full training loss plateaus.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cox_objective import build_risk_index, grad_hess

log = logging.getLogger(__name__)

BN_EPS = 1e-5


@dataclass
class MlpHyperparams:
    num_layers: int = 2
    layer_size: int = 16
    learning_rate: float = 0.001
    dropout: float = 0.2
    batch_size: int = 50000
    lr_patience: int = 5
    max_epochs: int = 200
    max_lr_reductions: int = 2
    momentum: float = 0.9
    seed: int = 42

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")


@dataclass
class Block:
    W: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class MlpModel:
    blocks: list[Block]
    w_out: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    dropout: float = 0.0
    momentum: float = 0.9
    history: list[float] = field(default_factory=list, repr=False)

    def params(self) -> list[np.ndarray]:
        out = []
        for blk in self.blocks:
            out += [blk.W, blk.b, blk.gamma, blk.beta]
        return out + [self.w_out]

    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "feature_names": list(self.feature_names),
            "dropout": self.dropout,
            "momentum": self.momentum,
            "blocks": [{k: getattr(b, k).tolist() for k in Block.__dataclass_fields__} for b in self.blocks],
            "w_out": self.w_out.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        blocks = [Block(**{k: np.asarray(v, dtype=float) for k, v in b.items()}) for b in d["blocks"]]
        return cls(
            blocks=blocks,
            w_out=np.asarray(d["w_out"], dtype=float),
            feature_names=list(d["feature_names"]),
            dropout=float(d["dropout"]),
            momentum=float(d["momentum"]),
        )


def init_mlp(p: int, hp: MlpHyperparams, zero: bool = False) -> MlpModel:
    """Glorot-uniform weights, zero biases, unit batch-norm scale.

    ``zero=True`` zeroes every weight (test hook for the constant network).
    """
    if p < 1:
        raise ValueError("need at least one input feature")
    rng = np.random.default_rng(hp.seed)
    sizes = [p] + [hp.layer_size] * hp.num_layers

    def glorot(fan_in, fan_out):
        if zero:
            return np.zeros((fan_in, fan_out))
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    blocks = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        blocks.append(
            Block(
                W=glorot(fan_in, fan_out),
                b=np.zeros(fan_out),
                gamma=np.ones(fan_out),
                beta=np.zeros(fan_out),
                running_mean=np.zeros(fan_out),
                running_var=np.ones(fan_out),
            )
        )
    return MlpModel(blocks=blocks, w_out=glorot(sizes[-1], 1)[:, 0], dropout=hp.dropout, momentum=hp.momentum)


def forward(model: MlpModel, X: np.ndarray, train: bool = False, rng=None, update_stats: bool = False):
    """Return ``(eta, cache)``. Training mode normalises with batch statistics
    and applies inverted dropout when ``rng`` is given."""
    h = X
    cache = []
    for blk in model.blocks:
        z = h @ blk.W + blk.b
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            if update_stats:
                m = model.momentum
                n = len(z)
                unbiased = var * n / (n - 1) if n > 1 else var
                blk.running_mean = m * blk.running_mean + (1 - m) * mu
                blk.running_var = m * blk.running_var + (1 - m) * unbiased
        else:
            mu, var = blk.running_mean, blk.running_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mu) * inv_std
        a = blk.gamma * xhat + blk.beta
        r = np.maximum(a, 0.0)
        mask = None
        if train and rng is not None and model.dropout > 0:
            mask = (rng.random(r.shape) >= model.dropout) / (1.0 - model.dropout)
            r = r * mask
        cache.append((h, xhat, inv_std, a, mask))
        h = r
    return h @ model.w_out, (cache, h)


def backward(model: MlpModel, cache, d_eta: np.ndarray, train: bool) -> list[np.ndarray]:
    """Gradients for ``model.params()`` given ``dL/deta``."""
    blocks_cache, h_last = cache
    grads_rev = [h_last.T @ d_eta]
    dh = np.outer(d_eta, model.w_out)
    for blk, (h_in, xhat, inv_std, a, mask) in zip(reversed(model.blocks), reversed(blocks_cache)):
        if mask is not None:
            dh = dh * mask
        da = dh * (a > 0)
        d_gamma = (da * xhat).sum(axis=0)
        d_beta = da.sum(axis=0)
        dxhat = da * blk.gamma
        if train:
            n = len(dxhat)
            dz = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dz = dxhat * inv_std
        dW = h_in.T @ dz
        db = dz.sum(axis=0)
        dh = dz @ blk.W.T
        grads_rev += [d_beta, d_gamma, db, dW]
    return grads_rev[::-1]


def cox_loss_and_grad(eta: np.ndarray, time, event):
    """Negative mean partial log-likelihood and its gradient wrt ``eta``."""
    idx = build_risk_index(time, event)
    out = grad_hess(idx, eta)
    return out.loss, -out.grad / len(eta)


class Adam:
    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        """In-place update of ``params``."""
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def stratified_batches(event: np.ndarray, batch_size: int, rng) -> list[np.ndarray]:
    """Shuffle and deal rows into near-equal batches, events and censored
    rows separately, so every batch gets its share of events."""
    n = len(event)
    n_batches = max(1, math.ceil(n / min(batch_size, n)))
    n_batches = min(n_batches, max(1, int(event.sum())))
    ev = rng.permutation(np.flatnonzero(event == 1))
    ce = rng.permutation(np.flatnonzero(event == 0))
    dealt = np.concatenate([ev, ce])
    return [np.sort(dealt[k::n_batches]) for k in range(n_batches)]


def fit_mlp(ds, hp: MlpHyperparams, model: MlpModel | None = None, freeze: bool = False) -> MlpModel:
    """Train the network. Loss history (full-train, evaluation mode) is kept
    in ``model.history``; ``history[0]`` is the loss before any update."""
    X = np.asarray(ds.X, dtype=float)
    if np.isnan(X).any():
        raise ValueError("features contain missing values; preprocess first")
    time = np.asarray(ds.time, dtype=float)
    event = np.asarray(ds.event)
    if model is None:
        model = init_mlp(X.shape[1], hp)
    model.feature_names = list(ds.columns)
    rng = np.random.default_rng(hp.seed + 1)
    opt = Adam(model.params(), lr=hp.learning_rate)
    full_idx = build_risk_index(time, event)

    def full_loss():
        return grad_hess(full_idx, predict(model, X)).loss

    best = full_loss()
    model.history = [best]
    stale = 0
    reductions = 0
    skipped = 0
    for _ in range(hp.max_epochs):
        for rows in stratified_batches(event, hp.batch_size, rng):
            if not event[rows].any() or len(rows) < 2:
                skipped += 1
                continue
            eta, cache = forward(model, X[rows], train=True, rng=rng, update_stats=True)
            _, d_eta = cox_loss_and_grad(eta, time[rows], event[rows])
            grads = backward(model, cache, d_eta, train=True)
            if not freeze:
                opt.step(model.params(), grads)
        loss = full_loss()
        model.history.append(loss)
        if loss < best:
            best, stale = loss, 0
        else:
            stale += 1
            if stale >= hp.lr_patience:
                reductions += 1
                if reductions >= hp.max_lr_reductions:
                    break
                opt.lr *= 0.1
                stale = 0
    if skipped:
        log.warning("skipped %d batches without events", skipped)
    return model


def predict(model: MlpModel, X) -> np.ndarray:
    if hasattr(X, "columns"):
        if model.feature_names and list(X.columns) != list(model.feature_names):
            raise ValueError("feature mismatch between model and data")
        X = X.X
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.blocks[0].W.shape[0]:
        raise ValueError(f"expected {model.blocks[0].W.shape[0]} feature columns, got shape {X.shape}")
    return forward(model, X, train=False)[0]
