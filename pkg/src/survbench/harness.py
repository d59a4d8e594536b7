"""Nested cross-validation benchmark, model ranking, paired comparisons and
the sample-size scaling experiment.

Every model kind is reachable through :func:`fit_model` / :func:`predict_model`
so the harness and the command line share one dispatch table.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cox_linear, forest, gbt, mlp
from .cox_linear import ALPHAS, L1_RATIOS, MINIMAL_RIDGE, ConvergenceError, PenaltySpec
from .cox_objective import NoEventsError
from .dataset import DataError, SurvivalDataset, SynthSpec, generate_synthetic, load_csv, make_folds, subsample
from .metrics import (
    MetricReport,
    UndefinedMetricError,
    bh_fdr,
    default_tau,
    harrell_c,
    paired_t_test,
    top_fraction_metrics,
    uno_c,
)
from .preprocess import PreprocessConfig, apply_preprocessor, fit_preprocessor

log = logging.getLogger(__name__)

MODEL_KINDS = ("CoxPlain", "CoxRidge", "CoxLasso", "CoxElasticNet", "Rsf", "GbtLeafWise", "GbtDepthWise", "Mlp")
LINEAR_KINDS = ("CoxPlain", "CoxRidge", "CoxLasso", "CoxElasticNet")

DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "CoxPlain": {"alpha": [MINIMAL_RIDGE]},
    "CoxRidge": {"alpha": list(ALPHAS)},
    "CoxLasso": {"alpha": list(ALPHAS)},
    "CoxElasticNet": {"alpha": list(ALPHAS), "l1_ratio": list(L1_RATIOS)},
    "Rsf": {"n_estimators": [50, 100, 200], "max_depth": [3, 7, 10]},
    "GbtLeafWise": {"n_estimators": [50, 100, 200], "num_leaves": [7, 127, 1023]},
    "GbtDepthWise": {"n_estimators": [50, 100, 200], "max_depth": [3, 7, 10]},
    "Mlp": {"num_layers": [2, 3, 5], "layer_size": [16, 64, 256]},
}

# knobs that are fixed rather than searched
DEFAULT_FIXED: dict[str, dict] = {
    "Rsf": {"min_node_size": 20},
    "Mlp": {"learning_rate": 0.001, "dropout": 0.2, "batch_size": 50000, "lr_patience": 5},
}


POSITIVE_CLASS_NOTE = (
    "top-fraction sensitivity/specificity treat any observed event during follow-up as positive; "
    "censored rows count as negatives"
)


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# grids and model dispatch


@dataclass
class GridSpec:
    model_kind: str
    grid: dict[str, list] = field(default_factory=dict)
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model_kind!r}; expected one of {', '.join(MODEL_KINDS)}")
        merged = {k: list(v) for k, v in DEFAULT_GRIDS[self.model_kind].items()}
        for k, v in self.grid.items():
            merged[k] = list(v)
        self.grid = merged
        self.fixed = {**DEFAULT_FIXED.get(self.model_kind, {}), **self.fixed}
        if self.model_kind == "CoxPlain" and self.grid != {"alpha": [MINIMAL_RIDGE]}:
            raise ConfigError("CoxPlain has a fixed singleton grid")
        if any(len(v) == 0 for v in self.grid.values()):
            raise ConfigError(f"empty grid for {self.model_kind}")

    def points(self) -> list[dict]:
        keys = list(self.grid)
        return [{**self.fixed, **dict(zip(keys, combo))} for combo in itertools.product(*(self.grid[k] for k in keys))]

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(model_kind=d["model"], grid=dict(d.get("grid", {})), fixed=dict(d.get("fixed", {})))


def complexity(params: dict) -> float:
    """Tree ensembles: n_estimators x leaf budget; MLP: num_layers x layer_size^2."""
    if "num_layers" in params:
        return float(params["num_layers"] * params["layer_size"] ** 2)
    if "num_leaves" in params:
        return float(params["n_estimators"] * params["num_leaves"])
    if "max_depth" in params and "n_estimators" in params:
        return float(params["n_estimators"] * (2 ** params["max_depth"] - 1))
    raise ValueError(f"no complexity accounting for {params}")


def selection_complexity(kind: str, params: dict) -> float:
    """Tie-break key: smaller is simpler. A stronger penalty counts as simpler."""
    if kind in LINEAR_KINDS:
        return -float(params["alpha"])
    return complexity(params)


def fit_model(kind: str, params: dict, ds: SurvivalDataset, seed: int = 0):
    p = dict(params)
    if kind == "CoxPlain":
        return cox_linear.fit_newton(ds, ridge_alpha=MINIMAL_RIDGE)
    if kind == "CoxRidge":
        # mean-likelihood ridge alpha corresponds to ridge n*alpha on the summed likelihood
        return cox_linear.fit_newton(ds, ridge_alpha=ds.n_rows * float(p["alpha"]))
    if kind == "CoxLasso":
        return cox_linear.fit_coordinate_descent(ds, PenaltySpec(float(p["alpha"]), 1.0))
    if kind == "CoxElasticNet":
        return cox_linear.fit_coordinate_descent(ds, PenaltySpec(float(p["alpha"]), float(p["l1_ratio"])))
    if kind == "Rsf":
        return forest.fit_rsf(ds, forest.RsfHyperparams(seed=seed, **p))
    if kind in ("GbtLeafWise", "GbtDepthWise"):
        policy = gbt.LeafWise(int(p.pop("num_leaves"))) if kind == "GbtLeafWise" else gbt.DepthWise(int(p.pop("max_depth")))
        return gbt.fit_gbt(ds, gbt.GbtHyperparams(policy=policy, seed=seed, **p))
    if kind == "Mlp":
        return mlp.fit_mlp(ds, mlp.MlpHyperparams(seed=seed, **p))
    raise ConfigError(f"unknown model kind {kind!r}")


def predict_model(model, X) -> np.ndarray:
    if isinstance(model, cox_linear.CoxModel):
        return cox_linear.predict_risk(model, X)
    if isinstance(model, forest.RsfModel):
        return forest.predict_mortality(model, X)
    if isinstance(model, gbt.GbtModel):
        return gbt.predict(model, X)
    if isinstance(model, mlp.MlpModel):
        return mlp.predict(model, X)
    raise TypeError(f"unsupported model {type(model).__name__}")


def model_from_dict(d: dict):
    kinds = {"cox": cox_linear.CoxModel, "rsf": forest.RsfModel, "gbt": gbt.GbtModel, "mlp": mlp.MlpModel}
    try:
        return kinds[d["kind"]].from_dict(d)
    except KeyError as exc:
        raise DataError(f"unknown model document kind {d.get('kind')!r}") from exc


def evaluate(train_time, train_event, test: SurvivalDataset, risk, fractions=(0.1, 0.2), tau=None,
             train_risk=None) -> MetricReport:
    """Full metric suite on one test split; undefined metrics become nan."""
    tau = default_tau(test.time) if tau is None else float(tau)

    def safe(fn, *a):
        try:
            return fn(*a)
        except (UndefinedMetricError, ValueError) as exc:
            log.debug("metric undefined: %s", exc)
            return math.nan

    hc = safe(harrell_c, test.time, test.event, risk)
    uc = safe(uno_c, train_time, train_event, test.time, test.event, risk, tau)
    groups = {}
    for f in fractions:
        try:
            groups[float(f)] = top_fraction_metrics(test.time, test.event, risk, float(f), tau)
        except (UndefinedMetricError, ValueError) as exc:
            log.debug("group metrics undefined at %s: %s", f, exc)
    hc_train = math.nan
    if train_risk is not None:
        hc_train = safe(harrell_c, train_time, train_event, train_risk)
    return MetricReport(harrell_c=hc, uno_c=uc, delta_c=hc_train - hc, group=groups, harrell_c_train=hc_train, tau=tau)


# --------------------------------------------------------------------------
# configuration


@dataclass
class CostModel:
    price_per_hour: float = 1.0
    thresholds: list[float] = field(default_factory=lambda: [0.1, 0.01])

    def seconds(self) -> dict[float, float]:
        return {t: t / self.price_per_hour * 3600.0 for t in self.thresholds}


@dataclass
class ExperimentConfig:
    data_path: str | None = None
    synth: SynthSpec | None = None
    permute_events: bool = False
    feature_sets: dict[str, list[str]] = field(default_factory=dict)
    grids: list[GridSpec] = field(default_factory=list)
    outer_k: int = 5
    inner_k: int = 5
    seed: int = 0
    fractions: list[float] = field(default_factory=lambda: [0.1, 0.2])
    tau: float | None = None
    cost: CostModel = field(default_factory=CostModel)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    output_dir: str = "results"
    threads: int = 1

    def __post_init__(self):
        if self.outer_k < 2 or self.inner_k < 2:
            raise ConfigError("outer_k and inner_k must be >= 2")
        if (self.data_path is None) == (self.synth is None):
            raise ConfigError("exactly one of data.path or data.synthetic is required")
        if not self.grids:
            raise ConfigError("at least one model grid is required")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        validate_config(d)
        data = d["data"]
        path = data.get("path")
        if path is not None and base_dir is not None and not Path(path).is_absolute():
            path = str(base_dir / path)
        cv = d.get("cv", {})
        metrics = d.get("metrics", {})
        return cls(
            data_path=path,
            synth=SynthSpec.from_dict(data["synthetic"]) if "synthetic" in data else None,
            permute_events=bool(data.get("permute_events", False)),
            feature_sets={k: list(v) for k, v in d.get("feature_sets", {}).items()},
            grids=[GridSpec.from_dict(g) for g in d["models"]],
            outer_k=int(cv.get("outer_k", 5)),
            inner_k=int(cv.get("inner_k", 5)),
            seed=int(cv.get("seed", 0)),
            fractions=[float(f) for f in metrics.get("fractions", [0.1, 0.2])],
            tau=metrics.get("tau"),
            cost=CostModel(**d.get("cost", {})),
            preprocess=PreprocessConfig.from_dict(d.get("preprocess")),
            output_dir=d.get("output_dir", "results"),
        )


def _schema() -> dict:
    here = Path(__file__).resolve().parent / "config_schema.json"
    return json.loads(here.read_text())


def validate_config(d: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(d, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(d, base_dir=path.parent)


def load_dataset(cfg: ExperimentConfig) -> SurvivalDataset:
    ds = load_csv(cfg.data_path) if cfg.data_path else generate_synthetic(cfg.synth)
    if cfg.permute_events:
        rng = np.random.default_rng([cfg.seed, 7919])
        perm = rng.permutation(ds.n_rows)
        ds = SurvivalDataset(X=ds.X, columns=ds.columns, kinds=ds.kinds, time=ds.time[perm],
                             event=ds.event[perm], oracle_risk=None)
    return ds


# --------------------------------------------------------------------------
# nested cross-validation


@dataclass
class FoldResult:
    model_kind: str
    feature_set: str
    outer_fold: int
    chosen_hyperparameters: dict
    metrics: MetricReport | None
    fit_time_seconds: float
    n_train: int
    n_test: int
    n_events_train: int
    n_events_test: int
    inner_scores: list[float] = field(default_factory=list)
    valid: bool = True
    reason: str = ""
    preprocess_seconds: float = 0.0
    n_fits: int = 0


@dataclass
class BenchmarkReport:
    folds: list[FoldResult]
    outer_k: int
    size: int | None = None
    fit_count: int = 0
    preprocess_reports: dict = field(default_factory=dict)

    def valid_folds(self):
        return [f for f in self.folds if f.valid]

    def summary(self) -> dict:
        """Mean, sd and 95% interval per (model, feature_set, metric)."""
        cells: dict[tuple[str, str], dict[str, list[float]]] = {}
        for f in self.valid_folds():
            cell = cells.setdefault((f.model_kind, f.feature_set), {})
            for k, v in f.metrics.flat().items():
                cell.setdefault(k, []).append(v)
        out = {}
        for (model, fs), cell in sorted(cells.items()):
            stats = {}
            for k, values in cell.items():
                v = np.asarray(values, dtype=float)
                v = v[np.isfinite(v)]
                stats[k] = mean_ci(v)
            out[f"{model}|{fs}"] = stats
        return out


def mean_ci(values) -> dict:
    v = np.asarray(values, dtype=float)
    k = len(v)
    if k == 0:
        return {"mean": None, "sd": None, "ci_low": None, "ci_high": None, "k": 0}
    mean = float(v.mean())
    sd = float(v.std(ddof=1)) if k > 1 else 0.0
    half = 1.96 * sd / math.sqrt(k)
    return {"mean": mean, "sd": sd, "ci_low": mean - half, "ci_high": mean + half, "k": k}


def task_seed(seed: int, fold: int, grid_index: int) -> int:
    return int(np.random.SeedSequence([seed, fold, grid_index]).generate_state(1)[0])


def _score_inner(kind, params, ds, inner, seed):
    scores = []
    for k in range(inner.k):
        tr, te = ds.take(inner.train_rows(k)), ds.take(inner.test_rows(k))
        try:
            model = fit_model(kind, params, tr, seed)
            scores.append(harrell_c(te.time, te.event, predict_model(model, te)))
        except (UndefinedMetricError, NoEventsError, ConvergenceError) as exc:
            log.debug("inner fold %d of %s %s: %s", k, kind, params, exc)
            scores.append(math.nan)
    return scores


def select_hyperparameters(kind: str, points: list[dict], mean_scores: list[float]) -> int:
    """Index of the best grid point: highest mean inner C, then lower
    complexity, then earlier grid position."""
    best = None
    for i, (params, s) in enumerate(zip(points, mean_scores)):
        if not np.isfinite(s):
            continue
        key = (-s, selection_complexity(kind, params), i)
        if best is None or key < best[0]:
            best = (key, i)
    return 0 if best is None else best[1]


def _run_cell(cfg: ExperimentConfig, prepared, grid: GridSpec, grid_index: int, fs_name: str, fold: int) -> FoldResult:
    tr, te, prep_seconds, invalid = prepared
    kind = grid.model_kind
    points = grid.points()
    base = dict(model_kind=kind, feature_set=fs_name, outer_fold=fold, n_train=tr.n_rows if tr else 0,
                n_test=te.n_rows if te else 0, n_events_train=int(tr.event.sum()) if tr else 0,
                n_events_test=int(te.event.sum()) if te else 0, preprocess_seconds=prep_seconds)
    if invalid:
        return FoldResult(chosen_hyperparameters={}, metrics=None, fit_time_seconds=0.0, valid=False, reason=invalid, **base)
    seed = task_seed(cfg.seed, fold, grid_index)
    inner = make_folds(tr.n_rows, cfg.inner_k, seed)
    means = []
    n_fits = len(points) * inner.k + 1
    for params in points:
        s = np.asarray(_score_inner(kind, params, tr, inner, seed))
        means.append(float(np.nanmean(s)) if np.isfinite(s).any() else math.nan)
    chosen = points[select_hyperparameters(kind, points, means)]
    t0 = _time.perf_counter()
    try:
        model = fit_model(kind, chosen, tr, seed)
    except (ConvergenceError, NoEventsError) as exc:
        return FoldResult(chosen_hyperparameters=chosen, metrics=None, fit_time_seconds=0.0, valid=False,
                          reason=f"final fit failed: {exc}", inner_scores=means, n_fits=n_fits, **base)
    fit_seconds = _time.perf_counter() - t0
    report = evaluate(tr.time, tr.event, te, predict_model(model, te), cfg.fractions, cfg.tau,
                      train_risk=predict_model(model, tr))
    report.fit_time_seconds = fit_seconds
    return FoldResult(chosen_hyperparameters=chosen, metrics=report, fit_time_seconds=fit_seconds,
                      inner_scores=means, n_fits=n_fits, **base)


def _prepare_fold(cfg, ds: SurvivalDataset, outer, fold: int):
    """Preprocess one outer fold; returns (train, test, seconds, invalid_reason, report)."""
    raw_tr, raw_te = ds.take(outer.train_rows(fold)), ds.take(outer.test_rows(fold))
    if raw_te.event.sum() == 0:
        return None, raw_te, 0.0, "no events in outer test fold", None
    if raw_tr.event.sum() == 0:
        return raw_tr, raw_te, 0.0, "no events in outer training fold", None
    t0 = _time.perf_counter()
    plan, fit_report = fit_preprocessor(raw_tr, seed=task_seed(cfg.seed, fold, 65535) % (2**31), config=cfg.preprocess)
    keep = np.setdiff1d(np.arange(raw_tr.n_rows), [i for i, _ in fit_report.dropped_rows_missingness])
    tr, tr_report = apply_preprocessor(plan, raw_tr.take(keep))
    te, te_report = apply_preprocessor(plan, raw_te)
    seconds = _time.perf_counter() - t0
    reports = {"fit": fit_report.to_dict(), "train": tr_report.to_dict(), "test": te_report.to_dict()}
    if te.event.sum() == 0:
        return tr, te, seconds, "no events in outer test fold after preprocessing", reports
    return tr, te, seconds, "", reports


def count_fits(cfg: ExperimentConfig) -> int:
    per_fs = sum(cfg.outer_k * cfg.inner_k * len(g.points()) + cfg.outer_k for g in cfg.grids)
    return per_fs * max(1, len(cfg.feature_sets))


def run_nested_cv(cfg: ExperimentConfig, ds: SurvivalDataset | None = None, threads: int | None = None) -> BenchmarkReport:
    ds = load_dataset(cfg) if ds is None else ds
    feature_sets = cfg.feature_sets or {"all": list(ds.columns)}
    outer = make_folds(ds.n_rows, cfg.outer_k, cfg.seed)
    tasks, prep_reports = [], {}
    for fs_name, cols in feature_sets.items():
        sub = ds.select(cols)
        for fold in range(cfg.outer_k):
            tr, te, secs, invalid, reps = _prepare_fold(cfg, sub, outer, fold)
            if invalid:
                log.warning("feature set %s, outer fold %d invalid: %s", fs_name, fold, invalid)
            prep_reports[f"{fs_name}|{fold}"] = reps
            for gi, grid in enumerate(cfg.grids):
                tasks.append((grid, gi, fs_name, fold, (tr, te, secs, invalid)))
    n_threads = threads or cfg.threads or 1

    def run(t):
        grid, gi, fs_name, fold, prepared = t
        return _run_cell(cfg, prepared, grid, gi, fs_name, fold)

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    results.sort(key=lambda r: (list(feature_sets).index(r.feature_set), MODEL_KINDS.index(r.model_kind), r.outer_fold))
    fits = sum(r.n_fits for r in results)
    return BenchmarkReport(folds=results, outer_k=cfg.outer_k, fit_count=fits, preprocess_reports=prep_reports)


# --------------------------------------------------------------------------
# ranking and comparison


def mean_ranks(values) -> np.ndarray:
    """Rank 1 = highest; exact ties share the mean of the ranks they cover."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(-v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def rank_models(report: BenchmarkReport, metric: str = "harrell_c") -> dict:
    """Rank rows per (feature_set, fold) cell plus mean rank per model."""
    cells: dict[tuple[str, int], list[FoldResult]] = {}
    for f in report.valid_folds():
        cells.setdefault((f.feature_set, f.outer_fold), []).append(f)
    rows = []
    for (fs, fold), members in sorted(cells.items()):
        if len(members) < 2:
            continue
        r = mean_ranks([m.metrics.flat()[metric] for m in members])
        rows += [{"model": m.model_kind, "feature_set": fs, "fold": fold, "rank": float(x)} for m, x in zip(members, r)]
    per_model: dict[str, list[float]] = {}
    for row in rows:
        per_model.setdefault(f"{row['model']}|{row['feature_set']}", []).append(row["rank"])
    return {"rows": rows, "mean_rank": {k: float(np.mean(v)) for k, v in sorted(per_model.items())}}


def compare_models(report: BenchmarkReport, metric: str = "harrell_c") -> dict:
    """Paired t-tests across folds per feature set, BH-adjusted over each matrix.

    Returns ``{feature_set: {"models": [...], "p": matrix, "q": matrix}}``.
    """
    out = {}
    feature_sets = sorted({f.feature_set for f in report.folds})
    for fs in feature_sets:
        by_model: dict[str, dict[int, float]] = {}
        for f in report.valid_folds():
            if f.feature_set == fs:
                by_model.setdefault(f.model_kind, {})[f.outer_fold] = f.metrics.flat()[metric]
        models = [m for m in MODEL_KINDS if m in by_model]
        m = len(models)
        p = np.ones((m, m))
        pairs = []
        for a in range(m):
            for b in range(a + 1, m):
                folds = sorted(set(by_model[models[a]]) & set(by_model[models[b]]))
                if len(folds) < 2:
                    raise ValueError(f"fewer than 2 paired folds for {models[a]} vs {models[b]}")
                x = [by_model[models[a]][k] for k in folds]
                y = [by_model[models[b]][k] for k in folds]
                _, pv = paired_t_test(x, y)
                p[a, b] = p[b, a] = pv
                pairs.append((a, b))
        q = np.ones((m, m))
        if pairs:
            adj = bh_fdr([p[a, b] for a, b in pairs])
            for (a, b), qv in zip(pairs, adj):
                q[a, b] = q[b, a] = qv
        out[fs] = {"models": models, "p": p.tolist(), "q": q.tolist()}
    return out


# --------------------------------------------------------------------------
# scaling experiment


def scaling_experiment(cfg: ExperimentConfig, sizes, ds: SurvivalDataset | None = None, threads=None) -> list[BenchmarkReport]:
    ds = load_dataset(cfg) if ds is None else ds
    sizes = [int(s) for s in sizes]
    if max(sizes) > ds.n_rows:
        raise DataError(f"requested size {max(sizes)} exceeds the {ds.n_rows} available rows")
    reports = []
    for size in sizes:
        sub = subsample(ds, size, cfg.seed) if size < ds.n_rows else ds
        rep = run_nested_cv(cfg, sub, threads=threads)
        rep.size = size
        reports.append(rep)
    return reports


# --------------------------------------------------------------------------
# report files


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "nan"
    return repr(float(v))


def _clean(obj):
    """JSON-safe copy with non-finite floats mapped to None."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_reports(reports: list[BenchmarkReport], out_dir, cost: CostModel, timing_path=None) -> dict[str, Path]:
    """Write metrics.csv, summary.json and cost_thresholds.csv under ``out_dir``.

    These are deterministic functions of the config. Wall-clock fit times are
    written only when ``timing_path`` is given (``True`` means
    ``out_dir/timing.csv``).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / f for k, f in (("metrics", "metrics.csv"), ("summary", "summary.json"),
                                     ("cost", "cost_thresholds.csv"))}
    if timing_path is not None:
        paths["timing"] = out / "timing.csv" if timing_path is True else Path(timing_path)
    with open(paths["metrics"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["size", "model", "feature_set", "fold", "metric", "value"])
        for rep in reports:
            for f in rep.valid_folds():
                for k, v in f.metrics.flat().items():
                    w.writerow([rep.size or "", f.model_kind, f.feature_set, f.outer_fold, k, _fmt(v)])
    if "timing" in paths:
        write_timing(reports, paths["timing"])
    with open(paths["cost"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "price_per_hour", "seconds"])
        for t, s in cost.seconds().items():
            w.writerow([_fmt(t), _fmt(cost.price_per_hour), _fmt(s)])
    summary = []
    for rep in reports:
        summary.append({
            "size": rep.size,
            "fit_count": rep.fit_count,
            "metrics": rep.summary(),
            "ranks": rank_models(rep),
            "q_values": _compare_or_none(rep),
            "chosen_hyperparameters": [
                {"model": f.model_kind, "feature_set": f.feature_set, "fold": f.outer_fold,
                 "params": f.chosen_hyperparameters, "inner_mean_c": f.inner_scores}
                for f in rep.folds if f.valid
            ],
            "invalid_folds": [
                {"model": f.model_kind, "feature_set": f.feature_set, "fold": f.outer_fold, "reason": f.reason}
                for f in rep.folds if not f.valid
            ],
            "preprocess": rep.preprocess_reports,
        })
    doc = {"notes": [POSITIVE_CLASS_NOTE], "results": summary}
    paths["summary"].write_text(json.dumps(_clean(doc), indent=1, sort_keys=True) + "\n")
    return paths


def write_timing(reports: list[BenchmarkReport], path) -> None:
    """One row per (model, feature_set, size, fold) with the final-fit seconds."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "feature_set", "size", "fold", "seconds", "preprocess_seconds"])
        for rep in reports:
            size = rep.size or (rep.folds[0].n_train + rep.folds[0].n_test if rep.folds else 0)
            for f in rep.folds:
                if f.valid:
                    w.writerow([f.model_kind, f.feature_set, size, f.outer_fold, _fmt(f.fit_time_seconds),
                                _fmt(f.preprocess_seconds)])


def _compare_or_none(rep):
    try:
        return compare_models(rep)
    except ValueError as exc:
        log.warning("model comparison skipped: %s", exc)
        return None


def report_from_dir(in_dir, fmt: str = "json") -> str:
    """Re-emit the per-model summary of a results directory."""
    d = Path(in_dir)
    summary = json.loads((d / "summary.json").read_text())
    if fmt == "json":
        return json.dumps(summary, indent=1, sort_keys=True)
    lines = ["size,model,feature_set,metric,mean,ci_low,ci_high,k"]
    for block in summary["results"]:
        for cell, stats in block["metrics"].items():
            model, fs = cell.split("|")
            for metric, s in stats.items():
                lines.append(",".join(str(x) for x in (block["size"] or "", model, fs, metric, s["mean"], s["ci_low"], s["ci_high"], s["k"])))
    return "\n".join(lines)


def fold_result_dict(f: FoldResult) -> dict:
    d = asdict(f)
    d["metrics"] = None if f.metrics is None else f.metrics.flat()
    return d
