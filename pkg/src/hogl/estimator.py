"""scikit-learn style estimator wrapping preprocessing, fitting and tuning."""

import numbers

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .basis import BasisSpec, fourier_basis, polynomial_basis, uniform_time_points
from .exceptions import DimensionMismatchError, InvalidDimensionError
from .solver import (
    PenaltySpec,
    adaptive_weights,
    build_problem,
    fit,
    lambda_max,
    resolve_route,
)
from .tuning import (
    LAMBDA_MIN_RATIO,
    N_DELTAS,
    N_LAMBDAS,
    TuningGrid,
    grid_search,
    make_grid,
    make_result,
)

BASES = ("polynomial", "fourier")
WEIGHTINGS = ("adaptive", "uniform")


def make_basis(kind, t, q):
    """Basis matrix and level structure for ``kind`` at time points ``t``."""
    if kind == "polynomial":
        return polynomial_basis(t, q), BasisSpec.scalar(q)
    if kind == "fourier":
        return fourier_basis(t, q)
    raise ValueError(f"unknown basis {kind!r}; choose from {BASES}")


def base_weights(prob, route, weighting):
    if weighting == "adaptive":
        return adaptive_weights(prob, route)
    if weighting == "uniform":
        return np.ones((prob.k, prob.q))
    raise ValueError(f"unknown weighting {weighting!r}; choose from {WEIGHTINGS}")


class HOGLRegressor(RegressorMixin, BaseEstimator):
    """Varying-coefficient GMANOVA regression with hierarchical sparsity.

    Each explanatory variable gets a time trend expanded in ``basis``; the
    penalty removes whole variables and trims high-order terms first.

    Parameters
    ----------
    q : int
        Number of basis levels (polynomial degree + 1, or Fourier harmonics + 1).
    basis : {"polynomial", "fourier"}
    time_points : array-like of shape (p,), optional
        Observation times; defaults to ``p`` equally spaced points on [-1, 1].
    route : {"hogl2", "hogl1", "bcd", "mm"}
        ``hogl2`` runs coordinate descent on the orthonormalized basis,
        ``hogl1`` runs majorize-minimize on the raw basis.
    delta, lam : float, optional
        Fixed tuning pair. When both are None they are chosen by EGCV over
        the grid described by ``n_deltas``, ``n_lambdas`` and
        ``lambda_min_ratio``. Giving only one is an error.
    weighting : {"adaptive", "uniform"}
    egcv_exponent : "log-np", "sqrt-np" or float
    tol, max_iter : solver stopping rule.

    Attributes
    ----------
    coef_ : ndarray of shape (k, m)
        Coefficients for the input (unstandardized) features.
    theta_ : ndarray of shape (k, m)
        Coefficients for the centered, unit-norm features.
    xi_ : ndarray or None
        Orthonormal-basis coefficients (``hogl2`` only).
    intercept_ : ndarray of shape (p,)
    selected_variables_ : ndarray of int
    degrees_ : list of int or None
        Highest active level per variable, None when excluded.
    delta_, lambda_, lambda_max_, df_, egcv_ : scalars of the chosen fit.
    result_ : FitResult
    """

    def __init__(self, q=4, basis="polynomial", time_points=None, route="hogl2",
                 delta=None, lam=None, weighting="adaptive",
                 n_deltas=N_DELTAS, n_lambdas=N_LAMBDAS,
                 lambda_min_ratio=LAMBDA_MIN_RATIO, egcv_exponent="log-np",
                 tol=1e-6, max_iter=10000):
        self.q = q
        self.basis = basis
        self.time_points = time_points
        self.route = route
        self.delta = delta
        self.lam = lam
        self.weighting = weighting
        self.n_deltas = n_deltas
        self.n_lambdas = n_lambdas
        self.lambda_min_ratio = lambda_min_ratio
        self.egcv_exponent = egcv_exponent
        self.tol = tol
        self.max_iter = max_iter

    def _validate_params(self, p):
        if not isinstance(self.q, numbers.Integral) or self.q < 1:
            raise InvalidDimensionError(f"q must be a positive integer, got {self.q!r}")
        if self.basis not in BASES:
            raise ValueError(f"unknown basis {self.basis!r}; choose from {BASES}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}")
        resolve_route(self.route)
        if (self.delta is None) != (self.lam is None):
            raise ValueError("give both delta and lam, or neither to tune them")
        if self.delta is not None and not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if self.lam is not None and self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.n_deltas < 1 or self.n_lambdas < 1:
            raise ValueError("grid sizes must be positive")
        if not 0.0 < self.lambda_min_ratio < 1.0:
            raise ValueError("lambda_min_ratio must lie in (0, 1)")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter at least 1")
        if self.time_points is None:
            return uniform_time_points(p)
        t = np.asarray(self.time_points, dtype=float).ravel()
        if t.size != p:
            raise DimensionMismatchError(f"{t.size} time points for {p} response columns")
        return t

    def fit(self, A, Y):
        """Fit on an ``n x k`` design ``A`` and ``n x p`` responses ``Y``."""
        A, Y = check_X_y(A, Y, multi_output=True, y_numeric=True, ensure_min_samples=3)
        if Y.ndim != 2 or Y.shape[1] < 2:
            raise InvalidDimensionError("Y needs at least two time points (columns)")
        t = self._validate_params(Y.shape[1])
        route = resolve_route(self.route)
        X, spec = make_basis(self.basis, t, self.q)
        prob = build_problem(Y, A, X, spec.block_sizes)
        w0 = base_weights(prob, route, self.weighting)

        if self.delta is None:
            grid = make_grid(prob, w0, route, self.n_deltas, self.n_lambdas,
                             self.lambda_min_ratio)
            result = grid_search(prob, route, grid, w0, self.egcv_exponent,
                                 self.tol, self.max_iter)
        else:
            coefs = fit(prob, PenaltySpec(float(self.delta), float(self.lam), w0), route,
                        tol=self.tol, max_iter=self.max_iter)
            result = make_result(prob, coefs, self.delta, self.lam, self.egcv_exponent)

        self.problem_ = prob
        self.basis_matrix_ = X
        self.block_sizes_ = spec.block_sizes
        self.time_points_ = t
        self.base_weights_ = w0
        self.result_ = result
        self.theta_ = result.coefs.theta
        self.xi_ = result.coefs.xi
        self.coef_ = self.theta_ / prob.A_scales[:, None]
        self.intercept_ = prob.mu_hat - prob.A_means @ self.coef_ @ X.T
        self.selected_variables_ = result.selected_variables
        self.degrees_ = result.degrees
        self.delta_ = result.delta
        self.lambda_ = result.lam
        self.lambda_max_ = lambda_max(prob, result.delta, w0, route)
        self.df_ = result.df
        self.egcv_ = result.egcv
        self.n_iter_ = result.coefs.n_iter
        self.converged_ = result.converged
        self.n_features_in_ = A.shape[1]
        return self

    def predict(self, A):
        """Fitted trajectories ``intercept + A coef X'`` at the training time points."""
        check_is_fitted(self, "coef_")
        A = check_array(A)
        if A.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(
                f"A has {A.shape[1]} columns, model was fit with {self.n_features_in_}"
            )
        return self.intercept_[None, :] + A @ self.coef_ @ self.basis_matrix_.T

    def trend(self, t):
        """Varying coefficients ``beta_l(t)`` of each input feature at times ``t``."""
        check_is_fitted(self, "coef_")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        X, _ = make_basis(self.basis, np.concatenate([self.time_points_, t]), self.q)
        # rebuild on the union so column scaling matches the training basis
        scale = np.linalg.norm(self.basis_matrix_, axis=0) / np.linalg.norm(
            X[: self.time_points_.size], axis=0)
        return (X[self.time_points_.size:] * scale) @ self.coef_.T

    def _more_tags(self):
        return {"multioutput": True, "multioutput_only": True}
