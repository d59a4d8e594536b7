"""Survival-model benchmarking: Cox objectives, tree ensembles, a numpy Cox
network, censoring-aware metrics and a nested cross-validation harness."""

from .dataset import ColumnKind, DataError, SurvivalDataset, SynthSpec, generate_synthetic, load_csv, make_folds
from .cox_objective import build_risk_index, grad_hess, grad_hess_naive, partial_log_likelihood
from .metrics import harrell_c, uno_c

__all__ = [
    "ColumnKind",
    "DataError",
    "SurvivalDataset",
    "SynthSpec",
    "build_risk_index",
    "generate_synthetic",
    "grad_hess",
    "grad_hess_naive",
    "harrell_c",
    "load_csv",
    "make_folds",
    "partial_log_likelihood",
    "uno_c",
]
