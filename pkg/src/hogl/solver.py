"""GMANOVA working problem and the two fitting routes.

``"mm"`` (HOGL1) majorizes the residual sum of squares on the standardized
polynomial basis ``V`` and updates every coefficient row through the closed
form prox. ``"bcd"`` (HOGL2) works on the orthonormalized basis ``H`` where
the rows decouple exactly, and sweeps them cyclically.

The Kronecker design ``Z = A kron V`` is never formed: everything runs on the
Gram factors ``A'A``, ``V'V`` and the cross products ``A'UV`` / ``A'UH``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import linalg

from .basis import BasisSpec
from .exceptions import (
    ConvergenceWarning,
    DimensionMismatchError,
    InvalidDimensionError,
    NotPositiveDefiniteError,
    SingularSError,
)
from .kernels import (
    center_and_normalize_columns,
    flipped_qr,
    max_eigenvalue_kron,
    sym_inverse_sqrt,
)
from .prox import _prox_into

ROUTES = {"mm": "mm", "hogl1": "mm", "bcd": "bcd", "hogl2": "bcd"}

_WEIGHT_FLOOR = 1e-10


def resolve_route(route):
    try:
        return ROUTES[str(route).lower()]
    except KeyError:
        raise ValueError(f"unknown route {route!r}; use 'mm'/'hogl1' or 'bcd'/'hogl2'")


def unbiased_sigma(Y, A):
    """Residual covariance of ``Y`` after projecting out the intercept and ``A``.

    Divides by ``n - k - 1``. With centered ``A`` this is
    ``Y'(I - 11'/n - A(A'A)^-1 A')Y / (n - k - 1)``.
    """
    Y = np.asarray(Y, dtype=float)
    A = np.asarray(A, dtype=float)
    n, k = A.shape
    if Y.shape[0] != n:
        raise DimensionMismatchError(f"Y has {Y.shape[0]} rows, A has {n}")
    if n <= k + 1:
        raise InvalidDimensionError(f"need n > k + 1, got n={n}, k={k}")
    design = np.column_stack([np.ones(n), A])
    coef, *_ = np.linalg.lstsq(design, Y, rcond=None)
    R = Y - design @ coef
    S = R.T @ R / (n - k - 1)
    S = (S + S.T) / 2
    evals = np.linalg.eigvalsh(S)
    # compare against the spread of Y itself so round-off residuals count as zero
    Yc = Y - Y.mean(axis=0)
    scale = float(np.linalg.eigvalsh(Yc.T @ Yc)[-1]) / (n - k - 1)
    if evals[-1] <= 0 or evals[0] <= 1e-12 * max(evals[-1], scale):
        raise SingularSError("residual covariance estimate is not positive definite")
    return S


@dataclass(frozen=True, eq=False)
class GmanovaProblem:
    """Preprocessed matrices for one data set. Immutable after construction."""

    Y: np.ndarray
    A: np.ndarray
    X: np.ndarray
    S: np.ndarray
    Sinvhalf: np.ndarray
    U: np.ndarray
    V: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    L: float
    mu_hat: np.ndarray
    block_sizes: tuple
    A_means: np.ndarray
    A_scales: np.ndarray
    G: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    C_V: np.ndarray = field(repr=False)
    C_H: np.ndarray = field(repr=False)
    half_u_sq: float = field(repr=False)

    @property
    def n(self):
        return self.Y.shape[0]

    @property
    def p(self):
        return self.Y.shape[1]

    @property
    def k(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.X.shape[1]

    @property
    def q(self):
        return len(self.block_sizes)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.block_sizes)]).astype(np.int64)

    def cross(self, route):
        return self.C_V if resolve_route(route) == "mm" else self.C_H


def build_problem(Y, A_raw, X, block_sizes=None):
    """Standardize ``A`` and derive every matrix the solvers need."""
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    A_raw = np.asarray(A_raw, dtype=float)
    if A_raw.ndim == 1:
        A_raw = A_raw[:, None]
    if Y.ndim != 2 or X.ndim != 2:
        raise InvalidDimensionError("Y and X must be 2-d")
    n, p = Y.shape
    if A_raw.shape[0] != n:
        raise DimensionMismatchError(f"Y has {n} rows, A has {A_raw.shape[0]}")
    if X.shape[0] != p:
        raise DimensionMismatchError(f"Y has {p} columns, X has {X.shape[0]} rows")
    if X.shape[1] > p:
        raise InvalidDimensionError("basis has more columns than time points")
    if isinstance(block_sizes, BasisSpec):
        block_sizes = block_sizes.block_sizes
    if block_sizes is None:
        block_sizes = (1,) * X.shape[1]
    block_sizes = tuple(int(m) for m in block_sizes)
    if sum(block_sizes) != X.shape[1]:
        raise DimensionMismatchError("block sizes do not add up to the basis width")

    A, means, scales = center_and_normalize_columns(A_raw)
    S = unbiased_sigma(Y, A)
    try:
        Sinvhalf = sym_inverse_sqrt(S)
    except NotPositiveDefiniteError as exc:
        raise SingularSError(str(exc)) from exc
    U = Y @ Sinvhalf
    V = Sinvhalf @ X
    H, Q = flipped_qr(V)
    G = A.T @ A
    W = V.T @ V
    AU = A.T @ U
    return GmanovaProblem(
        Y=Y,
        A=A,
        X=X,
        S=S,
        Sinvhalf=Sinvhalf,
        U=U,
        V=V,
        H=H,
        Q=Q,
        L=max_eigenvalue_kron(G, W),
        mu_hat=Y.mean(axis=0),
        block_sizes=block_sizes,
        A_means=means,
        A_scales=scales,
        G=np.ascontiguousarray(G),
        W=np.ascontiguousarray(W),
        C_V=np.ascontiguousarray(AU @ V),
        C_H=np.ascontiguousarray(AU @ H),
        half_u_sq=0.5 * float(np.sum(U * U)),
    )


def effective_weights(base_weights, delta):
    """Level weights ``delta * w0`` for all but the last level, ``w0`` for the last."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    w = np.array(base_weights, dtype=float, copy=True)
    w[:, :-1] *= delta
    return w


@dataclass(frozen=True)
class PenaltySpec:
    delta: float
    lam: float
    base_weights: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        w = np.asarray(self.base_weights, dtype=float)
        if w.ndim != 2 or np.any(w <= 0):
            raise ValueError("base weights must be a positive k x q matrix")
        object.__setattr__(self, "base_weights", w)

    def weights(self):
        return effective_weights(self.base_weights, self.delta)

    def levels(self):
        """Per-row, per-level penalty ``lam * w(delta)``."""
        return np.ascontiguousarray(self.lam * self.weights())


@dataclass
class Coefficients:
    """Fitted coefficients on the standardized ``A``.

    ``theta`` always lives on the polynomial (``X``) scale. ``xi`` is the
    orthonormal-basis matrix and is only set for the ``"bcd"`` route.
    """

    theta: np.ndarray
    xi: np.ndarray = None
    route: str = "mm"
    n_iter: int = 0
    converged: bool = True
    trace: np.ndarray = None

    @property
    def native(self):
        return self.xi if self.route == "bcd" else self.theta


def _prefix_norms(M, offsets):
    cum = np.cumsum(M * M, axis=1)
    return np.sqrt(cum[:, offsets[1:] - 1])


def ols(prob, route="mm"):
    """Unpenalized estimator on the route's native basis."""
    xi = np.linalg.solve(prob.G, prob.C_H)
    if resolve_route(route) == "bcd":
        return xi
    return np.linalg.solve(prob.W, np.linalg.solve(prob.G, prob.C_V).T).T


def adaptive_weights(prob, route):
    """Reciprocal prefix norms of the OLS rows, floored at ``1e-10``."""
    est = ols(prob, route)
    norms = _prefix_norms(est, prob.offsets)
    return 1.0 / np.maximum(norms, _WEIGHT_FLOOR)


def lambda_max(prob, delta, weights, route):
    """Smallest penalty from which the all-zero fit is guaranteed.

    Levels whose weight vanishes (``delta = 0``) carry no penalty; in that
    case only the whole-row group remains and its bound is the row norm.
    """
    C = prob.cross(route)
    w = effective_weights(weights, delta)
    if delta == 0.0:
        row = np.linalg.norm(C, axis=1)
        return float(np.max(row / w[:, -1]))
    off = prob.offsets
    block = np.sqrt(np.add.reduceat(C * C, off[:-1], axis=1))
    return float(np.max(block / w))


def rss(theta, prob):
    """Half the squared residual norm on the polynomial basis."""
    theta = np.asarray(theta, dtype=float).reshape(prob.k, prob.m)
    R = prob.U - prob.A @ theta @ prob.V.T
    return 0.5 * float(np.sum(R * R))


def gradient_rss(theta_vec, prob):
    """Gradient ``Z'Z theta - Z'u`` with ``theta = vec(Theta')``."""
    theta_vec = np.asarray(theta_vec, dtype=float).ravel()
    if theta_vec.size != prob.k * prob.m:
        raise DimensionMismatchError(
            f"expected {prob.k * prob.m} coefficients, got {theta_vec.size}"
        )
    Theta = theta_vec.reshape(prob.k, prob.m)
    return (prob.G @ Theta @ prob.W - prob.C_V).ravel()


def rss_surrogate(theta, theta_hat, prob):
    """Quadratic majorizer of :func:`rss` touching it at ``theta_hat``."""
    theta = np.asarray(theta, dtype=float).ravel()
    theta_hat = np.asarray(theta_hat, dtype=float).ravel()
    r = gradient_rss(theta_hat, prob)
    L = prob.L
    diff = theta - theta_hat
    return rss(theta_hat, prob) + r @ diff + 0.5 * L * diff @ diff


def _penalty(M, levels, offsets):
    return float(np.sum(levels * _prefix_norms(M, offsets)))


def prss_value(coefs, prob, spec, route=None):
    """Penalized objective for the route's native coefficients.

    ``coefs`` is either a :class:`Coefficients` or a raw ``k x m`` matrix
    (``route`` then says which basis it refers to).
    """
    if isinstance(coefs, Coefficients):
        route = coefs.route if route is None else resolve_route(route)
        M = coefs.native if route == coefs.route else (
            coefs.theta if route == "mm" else coefs.xi
        )
    else:
        route = resolve_route(route or "mm")
        M = np.asarray(coefs, dtype=float)
    if M.shape != (prob.k, prob.m):
        raise DimensionMismatchError(f"expected {(prob.k, prob.m)}, got {M.shape}")
    basis = prob.V if route == "mm" else prob.H
    R = prob.U - prob.A @ M @ basis.T
    return 0.5 * float(np.sum(R * R)) + _penalty(M, spec.levels(), prob.offsets)


@njit(cache=True, error_model="numpy")
def _objective_gram(M, GM, right, C, levels, offsets, half_u_sq):
    # 0.5||u||^2 - <M, C> + 0.5 <GM, M right> + penalty, with right = W or I
    k, m = M.shape
    q = offsets.size - 1
    fit = 0.0
    if right.shape[0] == 0:
        for i in range(k):
            for j in range(m):
                fit += M[i, j] * (0.5 * GM[i, j] - C[i, j])
    else:
        MW = M @ right
        for i in range(k):
            for j in range(m):
                fit += 0.5 * GM[i, j] * MW[i, j] - M[i, j] * C[i, j]
    pen = 0.0
    for i in range(k):
        s = 0.0
        for lvl in range(q):
            for j in range(offsets[lvl], offsets[lvl + 1]):
                s += M[i, j] * M[i, j]
            if levels[i, lvl] > 0.0:
                pen += levels[i, lvl] * np.sqrt(s)
    return half_u_sq + fit + pen


@njit(cache=True, error_model="numpy")
def _mm_kernel(G, W, C, L, levels, offsets, theta, tol, max_iter, trace, half_u_sq):
    k, m = theta.shape
    q = offsets.size - 1
    scaled = levels / L
    inv_L = 1.0 / L
    target = np.empty(m)
    row = np.empty(m)
    norms = np.empty(q)
    d = np.empty(q)
    TW = np.empty((k, m))
    new = np.empty((k, m))
    record = trace.size > 0
    if record:
        trace[0] = _objective_gram(theta, G @ theta, W, C, levels, offsets, half_u_sq)
    for it in range(1, max_iter + 1):
        for i in range(k):
            for j in range(m):
                s = 0.0
                for l in range(m):
                    s += theta[i, l] * W[l, j]
                TW[i, j] = s
        for i in range(k):
            for j in range(m):
                s = -C[i, j]
                for r in range(k):
                    s += G[i, r] * TW[r, j]
                target[j] = theta[i, j] - s * inv_L
            _prox_into(target, scaled[i], offsets, row, norms, d)
            for j in range(m):
                new[i, j] = row[j]
        change = 0.0
        size = 0.0
        for i in range(k):
            for j in range(m):
                change = max(change, abs(new[i, j] - theta[i, j]))
                size = max(size, abs(theta[i, j]))
                theta[i, j] = new[i, j]
        if record:
            trace[it] = _objective_gram(theta, G @ theta, W, C, levels, offsets, half_u_sq)
        if change <= tol * (1.0 + size):
            return it, True
    return max_iter, False


@njit(cache=True, error_model="numpy")
def _bcd_kernel(G, C, levels, offsets, xi, tol, max_iter, trace, half_u_sq):
    k, m = xi.shape
    q = offsets.size - 1
    GX = G @ xi
    target = np.empty(m)
    lam = np.empty(q)
    row = np.empty(m)
    norms = np.empty(q)
    d = np.empty(q)
    empty = np.empty((0, 0))
    record = trace.size > 0
    if record:
        trace[0] = _objective_gram(xi, GX, empty, C, levels, offsets, half_u_sq)
    for it in range(1, max_iter + 1):
        change = 0.0
        size = 0.0
        for i in range(k):
            g = G[i, i]
            for j in range(m):
                target[j] = (C[i, j] - GX[i, j] + g * xi[i, j]) / g
            for lvl in range(q):
                lam[lvl] = levels[i, lvl] / g
            _prox_into(target, lam, offsets, row, norms, d)
            for j in range(m):
                delta = row[j] - xi[i, j]
                if delta != 0.0:
                    for r in range(k):
                        GX[r, j] += G[r, i] * delta
                change = max(change, abs(delta))
                size = max(size, abs(xi[i, j]))
                xi[i, j] = row[j]
        if record:
            trace[it] = _objective_gram(xi, GX, empty, C, levels, offsets, half_u_sq)
        if change <= tol * (1.0 + size):
            return it, True
    return max_iter, False


def _init(init, prob):
    if init is None:
        return np.zeros((prob.k, prob.m))
    M = np.array(init, dtype=float, copy=True).reshape(prob.k, prob.m)
    return np.ascontiguousarray(M)


def _finish(n_iter, converged, max_iter, name):
    if not converged:
        warnings.warn(
            f"{name} stopped after max_iter={max_iter} iterations without converging",
            ConvergenceWarning,
            stacklevel=3,
        )


def fit_mm(prob, spec, init=None, tol=1e-6, max_iter=10000, record=False):
    """Majorize-minimize on the polynomial basis.

    Each iteration replaces the residual sum of squares by its isotropic
    quadratic majorizer with curvature ``L`` and solves the row-separable
    result in closed form. ``record=True`` keeps the objective after every
    iteration in ``trace``.
    """
    theta = _init(init, prob)
    trace = np.empty(max_iter + 1 if record else 0)
    n_iter, converged = _mm_kernel(
        prob.G, prob.W, prob.C_V, prob.L, spec.levels(), prob.offsets,
        theta, tol, max_iter, trace, prob.half_u_sq,
    )
    _finish(n_iter, converged, max_iter, "fit_mm")
    return Coefficients(
        theta=theta, route="mm", n_iter=int(n_iter), converged=bool(converged),
        trace=trace[: n_iter + 1] if record else None,
    )


def xi_to_theta(xi, prob):
    """Map orthonormal-basis coefficients back to the polynomial basis."""
    return linalg.solve_triangular(prob.Q, xi.T, lower=True).T


def fit_bcd(prob, spec, init=None, tol=1e-6, max_iter=10000, record=False):
    """Cyclic block coordinate descent on the orthonormalized basis.

    ``init`` is a starting ``Xi``. The returned ``theta`` is ``Xi inv(Q')``,
    which keeps every leading zero run of ``Xi``.
    """
    xi = _init(init, prob)
    trace = np.empty(max_iter + 1 if record else 0)
    n_iter, converged = _bcd_kernel(
        prob.G, prob.C_H, spec.levels(), prob.offsets,
        xi, tol, max_iter, trace, prob.half_u_sq,
    )
    _finish(n_iter, converged, max_iter, "fit_bcd")
    return Coefficients(
        theta=xi_to_theta(xi, prob), xi=xi, route="bcd", n_iter=int(n_iter),
        converged=bool(converged), trace=trace[: n_iter + 1] if record else None,
    )


def fit(prob, spec, route, **kwargs):
    route = resolve_route(route)
    return (fit_mm if route == "mm" else fit_bcd)(prob, spec, **kwargs)


def fitted_values(prob, theta):
    """``1 mu' + A Theta X'`` on the standardized design."""
    return prob.mu_hat[None, :] + prob.A @ theta @ prob.X.T

