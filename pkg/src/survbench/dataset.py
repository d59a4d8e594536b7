"""Survival datasets: CSV ingestion, fold assignment, subsampling and a
synthetic proportional-hazards generator used as a ground-truth source.

Missing values are stored as ``nan`` in the feature matrix.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

RESERVED = ("time", "event")


class DataError(ValueError):
    """Malformed or invalid survival data."""


class ColumnKind(str, enum.Enum):
    CONTINUOUS = "continuous"
    BOOLEAN = "boolean"


@dataclass
class SurvivalDataset:
    """Feature matrix plus right-censored outcomes.

    ``X`` has one column per entry of ``columns``; ``nan`` marks a missing
    cell. ``oracle_risk`` is only populated by :func:`generate_synthetic`
    and carries the true log-hazard of each row.
    """

    X: np.ndarray
    columns: list[str]
    kinds: list[ColumnKind]
    time: np.ndarray
    event: np.ndarray
    oracle_risk: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            self.X = self.X.reshape(len(self.time), -1)
        self.time = np.asarray(self.time, dtype=float)
        self.event = np.asarray(self.event).astype(np.int8)
        self.columns = list(self.columns)
        self.kinds = [ColumnKind(k) for k in self.kinds]
        n = len(self.time)
        if self.X.shape != (n, len(self.columns)):
            raise DataError(
                f"feature matrix shape {self.X.shape} does not match "
                f"{n} rows x {len(self.columns)} columns"
            )
        if len(self.kinds) != len(self.columns):
            raise DataError("one kind per column required")
        if len(set(self.columns)) != len(self.columns):
            raise DataError("column names must be unique")
        if len(self.event) != n:
            raise DataError("time and event lengths differ")
        if n and not np.all(self.time > 0):
            bad = int(np.flatnonzero(~(self.time > 0))[0])
            raise DataError(f"row {bad}: time must be > 0")
        if n and not np.all((self.event == 0) | (self.event == 1)):
            bad = int(np.flatnonzero((self.event != 0) & (self.event != 1))[0])
            raise DataError(f"row {bad}: event must be 0 or 1")
        for j, kind in enumerate(self.kinds):
            if kind is ColumnKind.BOOLEAN:
                col = self.X[:, j]
                obs = col[~np.isnan(col)]
                if not np.all((obs == 0) | (obs == 1)):
                    raise DataError(f"boolean column {self.columns[j]!r} has values outside {{0,1}}")
        if self.oracle_risk is not None:
            self.oracle_risk = np.asarray(self.oracle_risk, dtype=float)

    @property
    def n_rows(self) -> int:
        return len(self.time)

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.columns.index(name)]

    def take(self, rows) -> "SurvivalDataset":
        """Row subset (index array or boolean mask), schema preserved."""
        rows = np.asarray(rows)
        return SurvivalDataset(
            X=self.X[rows],
            columns=self.columns,
            kinds=self.kinds,
            time=self.time[rows],
            event=self.event[rows],
            oracle_risk=None if self.oracle_risk is None else self.oracle_risk[rows],
        )

    def select(self, names: Sequence[str]) -> "SurvivalDataset":
        missing = [c for c in names if c not in self.columns]
        if missing:
            raise DataError(f"missing required column(s): {', '.join(missing)}")
        idx = [self.columns.index(c) for c in names]
        return SurvivalDataset(
            X=self.X[:, idx],
            columns=list(names),
            kinds=[self.kinds[i] for i in idx],
            time=self.time,
            event=self.event,
            oracle_risk=self.oracle_risk,
        )


def _infer_kind(values: np.ndarray) -> ColumnKind:
    obs = values[~np.isnan(values)]
    if np.all((obs == 0) | (obs == 1)):
        return ColumnKind.BOOLEAN
    return ColumnKind.CONTINUOUS


def load_csv(path) -> SurvivalDataset:
    """Read a CSV with a header row and reserved ``time``/``event`` columns.

    Empty cells become missing values. A column is Boolean iff every observed
    value is 0 or 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        header = [h.strip() for h in header]
        for name in RESERVED:
            if name not in header:
                raise DataError(f"{path}: required column {name!r} not found")
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            parsed = []
            for name, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    parsed.append(math.nan)
                    continue
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {name!r}: cannot parse {cell!r} as a number"
                    ) from None
            rows.append(parsed)

    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    t_idx, e_idx = header.index("time"), header.index("event")
    time, event = data[:, t_idx], data[:, e_idx]
    for i in range(len(rows)):
        if not time[i] > 0:
            raise DataError(f"{path}: row {i + 2}: time must be > 0, got {time[i]}")
        if event[i] not in (0.0, 1.0):
            raise DataError(f"{path}: row {i + 2}: event must be 0 or 1, got {event[i]}")
    feat = [j for j in range(len(header)) if j not in (t_idx, e_idx)]
    X = data[:, feat]
    return SurvivalDataset(
        X=X,
        columns=[header[j] for j in feat],
        kinds=[_infer_kind(X[:, j]) for j in range(X.shape[1])],
        time=time,
        event=event.astype(np.int8),
    )


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_csv(ds: SurvivalDataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*ds.columns, "time", "event"])
        for i in range(ds.n_rows):
            w.writerow([*(_fmt(v) for v in ds.X[i]), _fmt(ds.time[i]), int(ds.event[i])])


@dataclass(frozen=True)
class FoldAssignment:
    n_rows: int
    k: int
    fold_of: np.ndarray

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


def make_folds(n_rows: int, k: int, seed: int) -> FoldAssignment:
    """Uniform random partition of ``n_rows`` into ``k`` near-equal folds."""
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if k > n_rows:
        raise ValueError(f"cannot split {n_rows} rows into {k} folds")
    perm = np.random.default_rng(seed).permutation(n_rows)
    fold_of = np.empty(n_rows, dtype=np.int64)
    fold_of[perm] = np.arange(n_rows) % k
    return FoldAssignment(n_rows=n_rows, k=k, fold_of=fold_of)


def subsample(ds: SurvivalDataset, n: int, seed: int) -> SurvivalDataset:
    """Simple random sample of ``n`` rows without replacement, original order kept."""
    if not 1 <= n <= ds.n_rows:
        raise ValueError(f"subsample size {n} outside [1, {ds.n_rows}]")
    rows = np.sort(np.random.default_rng(seed).choice(ds.n_rows, size=n, replace=False))
    return ds.take(rows)


@dataclass
class SynthSpec:
    n_rows: int
    n_continuous: int
    n_boolean: int
    risk_kind: str = "linear"  # "linear" | "nonlinear"
    beta: list[float] = field(default_factory=list)
    baseline_rate: float = 0.1
    target_event_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.risk_kind not in ("linear", "nonlinear"):
            raise ValueError(f"unknown risk_kind {self.risk_kind!r}")
        if not 0 < self.target_event_fraction <= 1:
            raise ValueError("target_event_fraction must lie in (0, 1]")
        if self.baseline_rate <= 0:
            raise ValueError("baseline_rate must be positive")
        if self.risk_kind == "linear" and len(self.beta) != self.n_continuous + self.n_boolean:
            raise ValueError(
                f"linear risk needs {self.n_continuous + self.n_boolean} coefficients, got {len(self.beta)}"
            )
        if self.risk_kind == "nonlinear" and (self.n_continuous < 3 or self.n_boolean < 2):
            raise ValueError("nonlinear risk needs >= 3 continuous and >= 2 boolean features")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)


def nonlinear_risk(X: np.ndarray, n_continuous: int) -> np.ndarray:
    x0, x1, x2 = X[:, 0], X[:, 1], X[:, 2]
    b0, b1 = X[:, n_continuous], X[:, n_continuous + 1]
    eta = 1.5 * x0 * x1 + 1.0 * (x2 > 0) + 0.5 * np.logical_xor(b0 > 0.5, b1 > 0.5)
    sd = eta.std()
    return eta / sd if sd > 0 else eta


def _expected_event_fraction(t: np.ndarray, c: float) -> float:
    # P(T <= C) with C ~ U(0, c), averaged over the latent times
    return float(np.mean(np.clip(1.0 - t / c, 0.0, None)))


def calibrate_censoring(latent: np.ndarray, target: float) -> float:
    """Upper bound ``c`` of uniform censoring giving the target event fraction."""
    if target >= 1.0:
        return math.inf
    lo, hi = 0.0, float(latent.max())
    while _expected_event_fraction(latent, hi) < target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _expected_event_fraction(latent, mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return 0.5 * (lo + hi)


def generate_synthetic(spec: SynthSpec) -> SurvivalDataset:
    """Exponential proportional-hazards data with uniform censoring.

    Continuous features are standard normal, Boolean features Bernoulli(0.5).
    Latent times follow ``-ln(U) / (rate * exp(eta))``; the censoring bound
    is found by bisection so that the expected event fraction hits the target.
    The true ``eta`` is returned as ``oracle_risk``.
    """
    rng = np.random.default_rng(spec.seed)
    n, pc, pb = spec.n_rows, spec.n_continuous, spec.n_boolean
    X = np.empty((n, pc + pb))
    X[:, :pc] = rng.standard_normal((n, pc))
    X[:, pc:] = rng.integers(0, 2, size=(n, pb))
    if spec.risk_kind == "linear":
        eta = X @ np.asarray(spec.beta, dtype=float)
    else:
        eta = nonlinear_risk(X, pc)
    u = rng.random(n)
    latent = -np.log1p(-u) / (spec.baseline_rate * np.exp(eta))
    c_max = calibrate_censoring(latent, spec.target_event_fraction)
    cens = rng.random(n) * c_max if math.isfinite(c_max) else np.full(n, np.inf)
    time = np.minimum(latent, cens)
    event = (latent <= cens).astype(np.int8)
    names = [f"x{j}" for j in range(pc)] + [f"b{j}" for j in range(pb)]
    kinds = [ColumnKind.CONTINUOUS] * pc + [ColumnKind.BOOLEAN] * pb
    return SurvivalDataset(X=X, columns=names, kinds=kinds, time=time, event=event, oracle_risk=eta)
