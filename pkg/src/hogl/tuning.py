"""Tuning-parameter grid, EGCV criterion and model read-out."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DfTooLargeError, HOGLError
from .solver import (
    Coefficients,
    _bcd_kernel,
    _mm_kernel,
    lambda_max,
    resolve_route,
    xi_to_theta,
)

logger = logging.getLogger(__name__)

N_DELTAS = 10
N_LAMBDAS = 100
LAMBDA_MIN_RATIO = 1e-4


@dataclass(frozen=True)
class TuningGrid:
    """``lambdas[i]`` is the strictly decreasing path used with ``deltas[i]``."""

    deltas: np.ndarray
    lambdas: np.ndarray

    @property
    def shape(self):
        return self.lambdas.shape

    @classmethod
    def single(cls, delta, lam):
        return cls(np.array([float(delta)]), np.array([[float(lam)]]))


def make_grid(prob, weights, route, n_deltas=N_DELTAS, n_lambdas=N_LAMBDAS,
              min_ratio=LAMBDA_MIN_RATIO):
    """Equally spaced deltas on [0, 1]; log-spaced lambdas below lambda_max(delta)."""
    deltas = np.linspace(0.0, 1.0, n_deltas) if n_deltas > 1 else np.array([1.0])
    lambdas = np.empty((deltas.size, n_lambdas))
    for i, delta in enumerate(deltas):
        top = lambda_max(prob, float(delta), weights, route)
        if top > 0:
            lambdas[i] = top * np.logspace(0.0, np.log10(min_ratio), n_lambdas)
            lambdas[i, 0] = top
        else:
            lambdas[i] = 0.0
    return TuningGrid(deltas, lambdas)


def resolve_exponent(exponent, n, p):
    """EGCV exponent from ``"log-np"``, ``"sqrt-np"`` or a number."""
    if isinstance(exponent, str):
        key = exponent.lower().replace("_", "-")
        if key == "log-np":
            return math.log(n * p)
        if key == "sqrt-np":
            return math.sqrt(n * p)
        return float(exponent)
    return float(exponent)


def egcv(Y, Y_hat, S, df, n, p, alpha_exp):
    r"""Extended GCV: ``tr{(Y - Yhat)' (Y - Yhat) S^-1} / (1 - df/np)^alpha``."""
    if df >= n * p:
        raise DfTooLargeError(f"df={df} must be below n*p={n * p}")
    R = np.asarray(Y, float) - np.asarray(Y_hat, float)
    num = float(np.sum(R * np.linalg.solve(S, R.T).T))
    return num / (1.0 - df / (n * p)) ** alpha_exp


def count_df(coefs, route=None):
    """Nonzero entries of the route's native coefficient matrix."""
    if isinstance(coefs, Coefficients):
        return int(np.count_nonzero(coefs.native))
    return int(np.count_nonzero(coefs))


def selected_model(coef, block_sizes):
    """Selected rows and the level (degree) of each.

    The degree of a nonzero row is ``q - 1 - a`` where ``a`` counts its
    leading all-zero blocks; excluded rows get ``None``. ``block_sizes`` may
    be an int ``q`` for the scalar case.

    Returns
    -------
    variables : ndarray of int
        0-based indices of nonzero rows.
    degrees : list of int or None
    """
    coef = np.asarray(coef)
    if np.isscalar(block_sizes) or np.ndim(block_sizes) == 0:
        block_sizes = (1,) * int(block_sizes)
    offsets = np.concatenate([[0], np.cumsum(block_sizes)])
    q = len(block_sizes)
    degrees = []
    for row in coef:
        lead = 0
        while lead < q and not np.any(row[offsets[lead]:offsets[lead + 1]]):
            lead += 1
        degrees.append(None if lead == q else q - 1 - lead)
    variables = np.array([i for i, d in enumerate(degrees) if d is not None], dtype=int)
    return variables, degrees


def render_degrees(degrees):
    """Degrees with excluded variables shown as 0, the usual tabular convention."""
    return [0 if d is None else d for d in degrees]


@dataclass
class FitResult:
    mu_hat: np.ndarray
    coefs: Coefficients
    delta: float
    lam: float
    df: int
    egcv: float
    selected_variables: np.ndarray
    degrees: list
    converged: bool
    path: list = field(default=None, repr=False)

    @property
    def theta(self):
        return self.coefs.theta

    def to_dict(self):
        out = {
            "mu_hat": self.mu_hat.tolist(),
            "theta": self.coefs.theta.tolist(),
            "route": self.coefs.route,
            "delta": self.delta,
            "lambda": self.lam,
            "df": self.df,
            "egcv": self.egcv,
            "selected_variables": [int(i) for i in self.selected_variables],
            "degrees": self.degrees,
            "converged": self.converged,
            "n_iter": self.coefs.n_iter,
        }
        if self.coefs.xi is not None:
            out["xi"] = self.coefs.xi.tolist()
        return out


def _residual_trace(prob, M, route):
    # tr{(Y - Yhat)'(Y - Yhat) S^-1} through Gram quantities; H'H = I on bcd
    Uc = prob.U - prob.U.mean(axis=0)
    base = float(np.sum(Uc * Uc))
    if route == "mm":
        quad = float(np.sum((prob.G @ M) * (M @ prob.W)))
        cross = float(np.sum(M * prob.C_V))
    else:
        quad = float(np.sum((prob.G @ M) * M))
        cross = float(np.sum(M * prob.C_H))
    return base - 2.0 * cross + quad


def residual_trace(prob, M, route):
    return _residual_trace(prob, M, resolve_route(route))


def make_result(prob, coefs, delta, lam, alpha_exp="log-np", path=None):
    """Package a fit with its EGCV value and selected model."""
    n, p = prob.n, prob.p
    alpha = resolve_exponent(alpha_exp, n, p)
    df = count_df(coefs)
    num = _residual_trace(prob, coefs.native, coefs.route)
    value = num / (1.0 - df / (n * p)) ** alpha if df < n * p else math.inf
    variables, degrees = selected_model(coefs.native, prob.block_sizes)
    return FitResult(
        mu_hat=prob.mu_hat, coefs=coefs, delta=float(delta), lam=float(lam), df=df,
        egcv=value, selected_variables=variables, degrees=degrees,
        converged=coefs.converged, path=path,
    )


def grid_search(prob, route, grid, weights, alpha_exp="log-np", tol=1e-6,
                max_iter=10000, keep_path=False):
    """Fit every grid cell and return the one with the smallest EGCV.

    Each delta row runs from its largest lambda downwards, seeding each fit
    with the previous solution. Ties go to the smaller df, then the larger
    lambda.
    """
    route = resolve_route(route)
    n, p = prob.n, prob.p
    alpha = resolve_exponent(alpha_exp, n, p)
    offsets = prob.offsets
    empty = np.empty(0)
    best_key, best = None, None
    path = [] if keep_path else None
    for delta, lambdas in zip(grid.deltas, grid.lambdas):
        w = np.array(weights, dtype=float, copy=True)
        w[:, :-1] *= delta
        M = np.zeros((prob.k, prob.m))
        for lam in lambdas:
            levels = np.ascontiguousarray(lam * w)
            try:
                if route == "mm":
                    n_iter, conv = _mm_kernel(
                        prob.G, prob.W, prob.C_V, prob.L, levels, offsets,
                        M, tol, max_iter, empty, prob.half_u_sq,
                    )
                else:
                    n_iter, conv = _bcd_kernel(
                        prob.G, prob.C_H, levels, offsets, M, tol, max_iter,
                        empty, prob.half_u_sq,
                    )
                if not np.all(np.isfinite(M)):
                    raise FloatingPointError("non-finite coefficients")
            except (HOGLError, FloatingPointError) as exc:
                logger.warning("skipping cell delta=%g lambda=%g: %s", delta, lam, exc)
                M = np.zeros((prob.k, prob.m))
                if keep_path:
                    path.append({
                        "delta": float(delta), "lambda": float(lam), "egcv": math.inf,
                        "df": None, "converged": False, "n_iter": 0,
                    })
                continue
            df = int(np.count_nonzero(M))
            num = _residual_trace(prob, M, route)
            value = num / (1.0 - df / (n * p)) ** alpha if df < n * p else math.inf
            if keep_path:
                path.append({
                    "delta": float(delta), "lambda": float(lam), "egcv": value,
                    "df": df, "converged": bool(conv), "n_iter": int(n_iter),
                })
            key = (value, df, -lam)
            if best_key is None or key < best_key:
                best_key = key
                best = (float(delta), float(lam), M.copy(), int(n_iter), bool(conv))
    if best is None:
        raise HOGLError("every grid cell failed")
    delta, lam, M, n_iter, conv = best
    if route == "mm":
        coefs = Coefficients(theta=M, route="mm", n_iter=n_iter, converged=conv)
    else:
        coefs = Coefficients(theta=xi_to_theta(M, prob), xi=M, route="bcd",
                             n_iter=n_iter, converged=conv)
    return make_result(prob, coefs, delta, lam, alpha, path=path)
