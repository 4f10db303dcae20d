"""Sparse nonnegative factorization of bipartite count data under imperfect detection."""

from .admm import KktResiduals, SolverDivergence, fit, impute_missing, kkt_residuals
from .alpha import AlphaProblem, solve_alpha
from .baselines import nmixture_fit, poisson_nmf
from .datagen import GeneratorParams, SyntheticTruth, generate
from .initialization import scale_aware_init
from .metrics import alpha_mse, auprc, auroc, graph_mse, perm_mse, rrmse
from .prox import half_threshold_matrix, half_threshold_scalar
from .types import (
    AuxState,
    CountData,
    DetectionState,
    FactorPair,
    FitResult,
    SolverConfig,
    compute_y_sum,
    flatten_index,
    unflatten_index,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaProblem", "AuxState", "CountData", "DetectionState", "FactorPair", "FitResult",
    "GeneratorParams", "KktResiduals", "SolverConfig", "SolverDivergence", "SyntheticTruth",
    "alpha_mse", "auprc", "auroc", "compute_y_sum", "fit", "flatten_index", "generate",
    "graph_mse", "half_threshold_matrix", "half_threshold_scalar", "impute_missing",
    "kkt_residuals", "nmixture_fit", "perm_mse", "poisson_nmf", "rrmse", "scale_aware_init",
    "solve_alpha", "unflatten_index",
]
