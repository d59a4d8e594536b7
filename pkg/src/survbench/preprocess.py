"""Train-fold preprocessing: encoding, missingness exclusion, chained-equation
imputation, biochemical zero handling, log-centring, outlier exclusion and
predictor filtering.

A :class:`PreprocessPlan` is fitted on training rows only and can then be
applied to any fold. Plans round-trip through JSON via ``to_dict``/``from_dict``.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import ColumnKind, DataError, SurvivalDataset
from .gbt import DepthWise, Tree, grow_tree

log = logging.getLogger(__name__)


@dataclass
class PreprocessConfig:
    var_min: float = 0.01
    corr_max: float = 0.99
    miss_col: float = 0.20
    miss_row: float = 0.20
    outlier_sd: float = 5.0
    biochemical: list[str] = field(default_factory=list)
    factor_columns: list[str] = field(default_factory=list)
    # "auto": log only continuous columns that are strictly positive on train
    log_transform: str = "auto"
    imputer_depth: int = 8
    imputer_min_leaf: int = 10
    imputer_sweeps: int = 3

    @classmethod
    def from_dict(cls, d: dict | None) -> "PreprocessConfig":
        return cls(**(d or {}))


# --------------------------------------------------------------------------
# one-hot encoding


def factor_levels(ds: SurvivalDataset, factor_columns) -> dict[str, list[float]]:
    """Observed levels per factor, sorted; the first one is the reference."""
    out = {}
    for name in factor_columns:
        col = ds.column(name)
        out[name] = sorted(float(v) for v in np.unique(col[~np.isnan(col)]))
    return out


def _level_name(col: str, level: float) -> str:
    return f"{col}={int(level) if float(level).is_integer() else level}"


def one_hot_encode(ds: SurvivalDataset, factor_columns, levels, unseen: Counter | None = None) -> SurvivalDataset:
    """Replace each factor by Boolean indicators for its non-reference levels.

    Values not in ``levels`` encode as all zeros and are tallied in
    ``unseen[column]``; missing values stay missing in every indicator.
    """
    keep = [j for j, c in enumerate(ds.columns) if c not in factor_columns]
    blocks, names, kinds = [ds.X[:, keep]], [ds.columns[j] for j in keep], [ds.kinds[j] for j in keep]
    for col in factor_columns:
        values = ds.column(col)
        lv = levels[col]
        miss = np.isnan(values)
        known = np.isin(values, lv) | miss
        n_unseen = int(np.sum(~known))
        if n_unseen:
            log.warning("factor %r: %d rows with unseen levels encoded as reference", col, n_unseen)
            if unseen is not None:
                unseen[col] += n_unseen
        for level in lv[1:]:
            ind = (values == level).astype(float)
            ind[miss] = np.nan
            blocks.append(ind[:, None])
            names.append(_level_name(col, level))
            kinds.append(ColumnKind.BOOLEAN)
    return SurvivalDataset(
        X=np.hstack(blocks) if blocks else np.empty((ds.n_rows, 0)),
        columns=names,
        kinds=kinds,
        time=ds.time,
        event=ds.event,
        oracle_risk=ds.oracle_risk,
    )


# --------------------------------------------------------------------------
# chained-equation imputation


@dataclass
class ImputerModel:
    """Column order, initial fill values and one tree per (sweep, column)."""

    columns: list[str]
    kinds: list[ColumnKind]
    fill: list[float]
    visit_order: list[int]
    sweeps: list[dict[int, Tree]]
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "columns": self.columns,
            "kinds": [k.value for k in self.kinds],
            "fill": self.fill,
            "visit_order": self.visit_order,
            "sweeps": [{str(j): t.to_dict() for j, t in sw.items()} for sw in self.sweeps],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImputerModel":
        return cls(
            columns=list(d["columns"]),
            kinds=[ColumnKind(k) for k in d["kinds"]],
            fill=[float(v) for v in d["fill"]],
            visit_order=[int(j) for j in d["visit_order"]],
            sweeps=[{int(j): Tree.from_dict(t) for j, t in sw.items()} for sw in d["sweeps"]],
            seed=int(d.get("seed", 0)),
        )


def _tree_fill(tree: Tree, X: np.ndarray, kind: ColumnKind) -> np.ndarray:
    pred = tree.predict(X)
    if kind is ColumnKind.BOOLEAN:
        return (pred >= 0.5).astype(float)
    return pred


def fit_imputer(X: np.ndarray, columns, kinds, seed: int = 0, sweeps: int = 3, max_depth: int = 8, min_leaf: int = 10) -> ImputerModel:
    """Chained equations with one regression tree per incomplete column.

    Columns are visited in ascending order of missingness. Columns complete
    on the training data get no tree; at apply time their gaps are filled
    with the training mean (continuous) or mode (Boolean).
    """
    X = np.asarray(X, dtype=float)
    miss = np.isnan(X)
    fill = []
    for j, kind in enumerate(kinds):
        obs = X[~miss[:, j], j]
        if obs.size == 0:
            fill.append(0.0)
        elif kind is ColumnKind.BOOLEAN:
            fill.append(float(obs.mean() >= 0.5))
        else:
            fill.append(float(obs.mean()))
    counts = miss.sum(axis=0)
    visit = [int(j) for j in np.argsort(counts, kind="stable") if counts[j] > 0]
    cur = np.where(miss, np.asarray(fill)[None, :], X)
    models = []
    policy = DepthWise(max_depth)
    for _ in range(sweeps if visit else 0):
        sweep = {}
        for j in visit:
            others = [k for k in range(X.shape[1]) if k != j]
            obs = ~miss[:, j]
            Xo = cur[:, others]
            tree = grow_tree(-X[obs, j], np.ones(int(obs.sum())), Xo[obs], policy, min_leaf, 0.0, seed)
            cur[~obs, j] = _tree_fill(tree, Xo[~obs], kinds[j])
            sweep[j] = tree
        models.append(sweep)
    return ImputerModel(list(columns), list(kinds), fill, visit, models, seed)


def impute(imputer: ImputerModel, ds: SurvivalDataset) -> SurvivalDataset:
    """Fill every missing cell of ``imputer.columns``; observed cells are kept."""
    sub = ds.select(imputer.columns)
    X = sub.X
    miss = np.isnan(X)
    if not miss.any():
        return sub
    cur = np.where(miss, np.asarray(imputer.fill)[None, :], X)
    p = X.shape[1]
    for sweep in imputer.sweeps:
        for j in imputer.visit_order:
            rows = miss[:, j]
            if not rows.any():
                continue
            others = [k for k in range(p) if k != j]
            cur[rows, j] = _tree_fill(sweep[j], cur[rows][:, others], imputer.kinds[j])
    return SurvivalDataset(X=cur, columns=sub.columns, kinds=sub.kinds, time=sub.time, event=sub.event, oracle_risk=sub.oracle_risk)


# --------------------------------------------------------------------------
# plan


@dataclass
class PreprocessReport:
    dropped_columns_missingness: list[tuple[str, str]] = field(default_factory=list)
    dropped_rows_missingness: list[tuple[int, str]] = field(default_factory=list)
    dropped_rows_outlier: list[tuple[int, str]] = field(default_factory=list)
    dropped_columns_variance: list[tuple[str, str]] = field(default_factory=list)
    dropped_columns_correlation: list[tuple[str, str]] = field(default_factory=list)
    unseen_levels: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PreprocessPlan:
    input_columns: list[str]  # columns the imputer expects, after encoding
    kept_columns: list[str]
    kinds: dict[str, ColumnKind]
    transform: dict[str, dict]
    zero_replacement: dict[str, float]
    imputer: ImputerModel
    factor_levels: dict[str, list[float]]
    config: PreprocessConfig

    def to_dict(self) -> dict:
        return {
            "input_columns": self.input_columns,
            "kept_columns": self.kept_columns,
            "kinds": {k: v.value for k, v in self.kinds.items()},
            "transform": self.transform,
            "zero_replacement": self.zero_replacement,
            "imputer": self.imputer.to_dict(),
            "factor_levels": self.factor_levels,
            "config": asdict(self.config),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessPlan":
        return cls(
            input_columns=list(d["input_columns"]),
            kept_columns=list(d["kept_columns"]),
            kinds={k: ColumnKind(v) for k, v in d["kinds"].items()},
            transform={k: dict(v) for k, v in d["transform"].items()},
            zero_replacement={k: float(v) for k, v in d["zero_replacement"].items()},
            imputer=ImputerModel.from_dict(d["imputer"]),
            factor_levels={k: [float(x) for x in v] for k, v in d["factor_levels"].items()},
            config=PreprocessConfig.from_dict(d["config"]),
        )


def _replace_zeros(X, columns, zero_replacement):
    X = X.copy()
    for name, value in zero_replacement.items():
        j = columns.index(name)
        X[X[:, j] == 0, j] = value
    return X


def _apply_transforms(X, columns, transform):
    """Return transformed matrix and a mask of rows with invalid log inputs."""
    X = X.copy()
    bad = np.zeros(len(X), dtype=bool)
    for j, name in enumerate(columns):
        tf = transform.get(name, {"kind": "none"})
        if tf["kind"] == "none":
            continue
        v = X[:, j]
        if tf["kind"] == "log_center":
            nonpos = ~(v > 0)
            bad |= nonpos
            v = np.log(np.where(nonpos, 1.0, v))
        sd = tf["sd"]
        X[:, j] = (v - tf["mean"]) / sd if sd > 0 else 0.0
    return X, bad


def fit_preprocessor(train: SurvivalDataset, seed: int = 0, config: PreprocessConfig | None = None):
    """Fit a preprocessing plan on training rows only.

    Returns ``(plan, report)``; ``report.dropped_rows_missingness`` indexes
    training rows that were left out of every subsequent fitting step.
    """
    cfg = config or PreprocessConfig()
    if train.n_rows == 0:
        raise DataError("training data is empty")
    report = PreprocessReport()
    levels = factor_levels(train, cfg.factor_columns)
    unseen = Counter()
    ds = one_hot_encode(train, cfg.factor_columns, levels, unseen) if cfg.factor_columns else train

    miss_frac = np.isnan(ds.X).mean(axis=0)
    cols = []
    for j, name in enumerate(ds.columns):
        if miss_frac[j] > cfg.miss_col:
            report.dropped_columns_missingness.append((name, f"{miss_frac[j]:.3f} missing > {cfg.miss_col}"))
        else:
            cols.append(name)
    if not cols:
        raise DataError("empty predictor matrix")
    ds = ds.select(cols)

    row_frac = np.isnan(ds.X).mean(axis=1)
    drop_rows = np.flatnonzero(row_frac > cfg.miss_row)
    report.dropped_rows_missingness = [(int(i), f"{row_frac[i]:.3f} missing > {cfg.miss_row}") for i in drop_rows]
    keep_rows = np.setdiff1d(np.arange(ds.n_rows), drop_rows)
    ds = ds.take(keep_rows)
    if ds.n_rows == 0:
        raise DataError("every training row exceeds the row missingness threshold")

    kinds = dict(zip(ds.columns, ds.kinds))
    biochem = [c for c in ds.columns if c in cfg.biochemical and kinds[c] is ColumnKind.CONTINUOUS]
    zero_repl = {}
    for name in biochem:
        obs = ds.column(name)
        obs = obs[~np.isnan(obs)]
        zero_repl[name] = float(np.median(obs)) / 10.0 if obs.size else 0.0
    X = _replace_zeros(ds.X, ds.columns, zero_repl)

    imputer = fit_imputer(
        X, ds.columns, ds.kinds, seed=seed, sweeps=cfg.imputer_sweeps,
        max_depth=cfg.imputer_depth, min_leaf=cfg.imputer_min_leaf,
    )
    Xi = impute(imputer, SurvivalDataset(X=X, columns=ds.columns, kinds=ds.kinds, time=ds.time, event=ds.event)).X

    transform = {}
    for j, name in enumerate(ds.columns):
        if kinds[name] is not ColumnKind.CONTINUOUS:
            transform[name] = {"kind": "none"}
            continue
        v = Xi[:, j]
        use_log = name in biochem or (cfg.log_transform == "all") or (cfg.log_transform == "auto" and np.all(v > 0))
        if use_log:
            lv = np.log(v[v > 0])
            kind = "log_center"
        else:
            lv = v
            kind = "center"
        mean = float(lv.mean()) if lv.size else 0.0
        sd = float(lv.std(ddof=1)) if lv.size > 1 else 0.0
        transform[name] = {"kind": kind, "mean": mean, "sd": sd}

    Z, _ = _apply_transforms(Xi, ds.columns, transform)
    alive = []
    for j, name in enumerate(ds.columns):
        tf = transform[name]
        var = 0.0 if tf["kind"] != "none" and tf["sd"] == 0 else float(np.var(Z[:, j], ddof=1)) if len(Z) > 1 else 0.0
        if var < cfg.var_min:
            report.dropped_columns_variance.append((name, f"variance {var:.4g} < {cfg.var_min}"))
        else:
            alive.append(j)
    if not alive:
        raise DataError("empty predictor matrix")

    dropped = set()
    if len(alive) > 1:
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.corrcoef(Z[:, alive], rowvar=False)
        for a in range(len(alive)):
            if a in dropped:
                continue
            for b in range(a + 1, len(alive)):
                if b not in dropped and abs(r[a, b]) > cfg.corr_max:
                    dropped.add(b)
                    report.dropped_columns_correlation.append(
                        (ds.columns[alive[b]], f"|r|={abs(r[a, b]):.4f} with {ds.columns[alive[a]]}")
                    )
    kept = [ds.columns[alive[a]] for a in range(len(alive)) if a not in dropped]
    report.unseen_levels = dict(unseen)

    plan = PreprocessPlan(
        input_columns=list(ds.columns),
        kept_columns=kept,
        kinds=kinds,
        transform=transform,
        zero_replacement=zero_repl,
        imputer=imputer,
        factor_levels=levels,
        config=cfg,
    )
    return plan, report


def apply_preprocessor(plan: PreprocessPlan, ds: SurvivalDataset):
    """Encode, zero-replace, impute, transform, drop outlier rows and subset.

    Returns ``(dataset, report)``; excluded rows are listed with a reason in
    ``report.dropped_rows_outlier`` (indices refer to ``ds``).
    """
    report = PreprocessReport()
    cfg = plan.config
    if cfg.factor_columns:
        unseen = Counter()
        ds = one_hot_encode(ds, cfg.factor_columns, plan.factor_levels, unseen)
        report.unseen_levels = dict(unseen)
    missing = [c for c in plan.input_columns if c not in ds.columns]
    if missing:
        raise DataError(f"missing required column(s): {', '.join(missing)}")
    ds = ds.select(plan.input_columns)
    X = _replace_zeros(ds.X, ds.columns, plan.zero_replacement)
    X = impute(plan.imputer, SurvivalDataset(X=X, columns=ds.columns, kinds=ds.kinds, time=ds.time, event=ds.event)).X
    Z, bad_log = _apply_transforms(X, ds.columns, plan.transform)

    reasons = {}
    for i in np.flatnonzero(bad_log):
        reasons[int(i)] = "non-positive value cannot be log-transformed"
    for name in plan.zero_replacement:
        j = ds.columns.index(name)
        for i in np.flatnonzero(np.abs(Z[:, j]) > cfg.outlier_sd):
            reasons.setdefault(int(i), f"{name} beyond {cfg.outlier_sd} SD")
    report.dropped_rows_outlier = sorted(reasons.items())
    keep = np.ones(ds.n_rows, dtype=bool)
    keep[list(reasons)] = False

    idx = [ds.columns.index(c) for c in plan.kept_columns]
    out = SurvivalDataset(
        X=Z[keep][:, idx],
        columns=plan.kept_columns,
        kinds=[plan.kinds[c] for c in plan.kept_columns],
        time=ds.time[keep],
        event=ds.event[keep],
        oracle_risk=None if ds.oracle_risk is None else ds.oracle_risk[keep],
    )
    return out, report


def kept_row_mask(report: PreprocessReport, n_rows: int) -> np.ndarray:
    keep = np.ones(n_rows, dtype=bool)
    keep[[i for i, _ in report.dropped_rows_outlier]] = False
    return keep


def plan_fingerprint(plan: PreprocessPlan) -> str:
    """Stable digest of a plan, used to check that test rows never leak in."""
    import hashlib
    import json

    return hashlib.sha256(json.dumps(plan.to_dict(), sort_keys=True).encode()).hexdigest()

