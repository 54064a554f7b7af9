"""Hierarchical overlapping group lasso for the GMANOVA (growth curve) model."""

from .basis import BasisSpec, fourier_basis, polynomial_basis, uniform_time_points
from .estimator import HOGLRegressor
from .exceptions import (
    ConvergenceWarning,
    DfTooLargeError,
    DimensionMismatchError,
    HOGLError,
    InvalidDimensionError,
    NotPositiveDefiniteError,
    RankDeficientError,
    SingularSError,
    ZeroColumnError,
    ZeroSignalError,
)
from .prox import ProxProblem, evaluate_objective, prox_solve, search_alpha_star, verify_kkt
from .solver import (
    Coefficients,
    GmanovaProblem,
    PenaltySpec,
    build_problem,
    fit_bcd,
    fit_mm,
    lambda_max,
)
from .tuning import FitResult, TuningGrid, egcv, grid_search, make_grid

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "Coefficients", "ConvergenceWarning", "DfTooLargeError",
    "DimensionMismatchError", "FitResult", "GmanovaProblem", "HOGLError",
    "HOGLRegressor", "InvalidDimensionError", "NotPositiveDefiniteError",
    "PenaltySpec", "ProxProblem", "RankDeficientError", "SingularSError",
    "TuningGrid", "ZeroColumnError", "ZeroSignalError", "build_problem", "egcv",
    "evaluate_objective", "fit_bcd", "fit_mm", "fourier_basis", "grid_search",
    "lambda_max", "make_grid", "polynomial_basis", "prox_solve",
    "search_alpha_star", "uniform_time_points", "verify_kkt",
]
