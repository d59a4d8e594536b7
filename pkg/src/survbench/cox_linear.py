"""Linear Cox models.

Two penalty conventions live here and are easy to mix up:

* :func:`fit_newton` maximises ``l(beta) - ridge_alpha/2 * ||beta||^2`` on the
  *summed* log partial likelihood.
* :func:`fit_coordinate_descent` minimises ``-l(beta)/n + alpha * (r*||beta||_1
  + (1-r)/2 * ||beta||^2)`` on the *mean* log partial likelihood.

So ``fit_coordinate_descent(alpha, l1_ratio=0)`` and
``fit_newton(ridge_alpha=n * alpha)`` solve the same problem.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cox_objective import build_risk_index, grad_hess

ALPHAS = tuple(float(a) for a in np.logspace(-3, 0, 5))
L1_RATIOS = tuple(round(0.1 * k, 1) for k in range(1, 11))
MINIMAL_RIDGE = 1e-6


class ConvergenceError(RuntimeError):
    def __init__(self, msg, beta=None):
        super().__init__(msg)
        self.beta = beta


@dataclass
class PenaltySpec:
    alpha: float
    l1_ratio: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 <= self.l1_ratio <= 1:
            raise ValueError("l1_ratio must lie in [0, 1]")

    def value(self, beta) -> float:
        beta = np.asarray(beta)
        return self.alpha * (
            self.l1_ratio * np.abs(beta).sum() + 0.5 * (1 - self.l1_ratio) * beta @ beta
        )


@dataclass
class CoxModel:
    beta: np.ndarray
    feature_names: list[str]
    baseline: list[tuple[float, float]] | None = None
    trace: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if len(self.beta) != len(self.feature_names):
            raise ValueError("one coefficient per feature required")

    def to_dict(self) -> dict:
        return {
            "kind": "cox",
            "feature_names": list(self.feature_names),
            "beta": [float(b) for b in self.beta],
            "baseline": None if self.baseline is None else [[t, h] for t, h in self.baseline],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoxModel":
        base = d.get("baseline")
        return cls(
            beta=np.asarray(d["beta"], dtype=float),
            feature_names=list(d["feature_names"]),
            baseline=None if base is None else [(float(t), float(h)) for t, h in base],
        )


def _loglik_score_hessian(X, idx, beta):
    """Summed log-likelihood, score vector and dense Hessian of ``l``."""
    eta = X @ beta
    order = idx.order
    z = eta[order]
    Xs = X[order]
    w = np.exp(z - z.max())
    d = idx.sorted_event.astype(float)
    gs = idx.group_start
    ev = idx.event_rows

    S0 = np.cumsum(w[::-1])[::-1][gs]
    S1 = np.cumsum((w[:, None] * Xs)[::-1], axis=0)[::-1][gs]

    ll = float(np.sum(z[ev] - z.max() - np.log(S0[ev])))
    mean = S1[ev] / S0[ev, None]
    score = (d[:, None] * Xs).sum(axis=0) - mean.sum(axis=0)
    # sum over events of the risk-set second moment equals X' diag(w A) X
    A = np.cumsum(d / S0)[idx.group_end - 1]
    hess = -(Xs.T * (w * A)) @ Xs + mean.T @ mean
    return ll, score, hess


def fit_newton(ds, ridge_alpha: float = MINIMAL_RIDGE, max_iter: int = 100, tol: float = 1e-9) -> CoxModel:
    """Damped Newton-Raphson on the ridge-penalised partial likelihood.

    Step halving (at most 20 times) is applied whenever the penalised
    log-likelihood fails to improve. The penalised objective per iteration is
    kept in ``model.trace``.
    """
    if ridge_alpha < 0:
        raise ValueError("ridge_alpha must be >= 0")
    X = np.asarray(ds.X, dtype=float)
    if np.isnan(X).any():
        raise ValueError("features contain missing values; preprocess first")
    idx = build_risk_index(ds.time, ds.event)
    p = X.shape[1]
    beta = np.zeros(p)

    def objective(b):
        ll, score, hess = _loglik_score_hessian(X, idx, b)
        return ll - 0.5 * ridge_alpha * b @ b, score - ridge_alpha * b, hess - ridge_alpha * np.eye(p)

    f, score, hess = objective(beta)
    trace = [f]
    for _ in range(max_iter):
        if p == 0 or np.max(np.abs(score)) < tol:
            break
        try:
            step = np.linalg.solve(-hess, score)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular Hessian", beta) from None
        if not np.all(np.isfinite(step)):
            raise ConvergenceError("singular Hessian", beta)
        scale = 1.0
        for _ in range(21):
            candidate = beta + scale * step
            f_new, score_new, hess_new = objective(candidate)
            if np.isfinite(f_new) and f_new >= f:
                break
            scale *= 0.5
        else:
            # no ascent direction left at floating-point resolution
            break
        rel = abs(f_new - f) / max(abs(f), 1.0)
        beta, f, score, hess = candidate, f_new, score_new, hess_new
        trace.append(f)
        if rel < tol:
            break
    else:
        raise ConvergenceError(f"Newton did not converge in {max_iter} iterations", beta)
    return CoxModel(beta=beta, feature_names=list(ds.columns), trace=trace)


def _soft(x: float, t: float) -> float:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def alpha_max(ds) -> float:
    """Smallest lasso alpha at which every coefficient is zero."""
    idx = build_risk_index(ds.time, ds.event)
    g = grad_hess(idx, np.zeros(ds.n_rows)).grad
    return float(np.max(np.abs(ds.X.T @ g)) / ds.n_rows)


def fit_coordinate_descent(
    ds,
    penalty: PenaltySpec,
    max_iter: int = 100,
    tol: float = 1e-7,
    max_inner: int = 1000,
    beta0=None,
) -> CoxModel:
    """Penalised Cox fit by cyclic coordinate descent on a quadratic model.

    Each outer iteration expands ``-l/n`` around the current coefficients
    using the gradient and Hessian diagonal with respect to ``eta``, then
    runs coordinate sweeps with soft-thresholding until coefficients move by
    less than ``tol``. A step is halved if the true objective increases.
    """
    if penalty.l1_ratio > 0 and penalty.alpha <= 0:
        raise ValueError("alpha must be > 0 when l1_ratio > 0")
    X = np.asarray(ds.X, dtype=float)
    if np.isnan(X).any():
        raise ValueError("features contain missing values; preprocess first")
    n, p = X.shape
    idx = build_risk_index(ds.time, ds.event)
    l1 = penalty.alpha * penalty.l1_ratio
    l2 = penalty.alpha * (1 - penalty.l1_ratio)
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()

    def objective(b):
        out = grad_hess(idx, X @ b)
        return out.loss + penalty.value(b), out

    f, out = objective(beta)
    trace = [f]
    for _ in range(max_iter):
        g, h = out.grad, out.hess
        v = (h[:, None] * X * X).sum(axis=0) / n
        new = beta.copy()
        u = np.zeros(n)  # X @ (new - beta)
        for _ in range(max_inner):
            max_delta = 0.0
            for k in range(p):
                xk = X[:, k]
                denom = v[k] + l2
                if denom <= 0:
                    continue
                c = xk @ (g - h * u) / n + v[k] * (new[k] - beta[k]) + v[k] * beta[k]
                bk = _soft(c, l1) / denom
                delta = bk - new[k]
                if delta != 0.0:
                    u += delta * xk
                    new[k] = bk
                    max_delta = max(max_delta, abs(delta))
            if max_delta < tol:
                break
        step = new - beta
        f_new, out_new = objective(new)
        halvings = 0
        while f_new > f + 1e-12 * max(1.0, abs(f)) and halvings < 30:
            step *= 0.5
            new = beta + step
            f_new, out_new = objective(new)
            halvings += 1
        change = np.max(np.abs(step)) if p else 0.0
        beta, f, out = new, f_new, out_new
        trace.append(f)
        if change < tol:
            break
    else:
        raise ConvergenceError(f"coordinate descent did not converge in {max_iter} iterations", beta)
    return CoxModel(beta=beta, feature_names=list(ds.columns), trace=trace)


def breslow_baseline(model: CoxModel, ds) -> list[tuple[float, float]]:
    """Breslow cumulative baseline hazard at each distinct event time."""
    eta = predict_risk(model, ds)
    time = np.asarray(ds.time, dtype=float)
    event = np.asarray(ds.event)
    if not event.any():
        return []
    order = np.argsort(time, kind="stable")
    ts, es, w = time[order], event[order], np.exp(eta[order])
    suffix = np.cumsum(w[::-1])[::-1]
    uniq, first = np.unique(ts, return_index=True)
    d = np.add.reduceat(es.astype(float), first)
    keep = d > 0
    H = np.cumsum(d[keep] / suffix[first][keep])
    return [(float(t), float(v)) for t, v in zip(uniq[keep], H)]


def predict_risk(model: CoxModel, X) -> np.ndarray:
    """Linear predictor ``X @ beta``; accepts a dataset or a bare matrix."""
    if hasattr(X, "columns"):
        if list(X.columns) != list(model.feature_names):
            raise ValueError(
                f"feature mismatch: model has {model.feature_names}, data has {list(X.columns)}"
            )
        X = X.X
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.beta):
        raise ValueError(f"expected {len(model.beta)} feature columns, got shape {X.shape}")
    return X @ model.beta
