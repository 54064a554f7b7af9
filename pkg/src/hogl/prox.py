r"""Closed-form minimizer of the nested (hierarchical overlapping) group penalty.

For a block vector :math:`b = (b_1, \ldots, b_q)` with block sizes
:math:`m_1, \ldots, m_q` and levels :math:`\lambda_j \ge 0` this module
minimizes

.. math::

    f(\gamma) = \tfrac12 \|\gamma\|^2 - b^\top \gamma
        + \sum_{j=1}^q \lambda_j \|\gamma_{(j)}\|,

where :math:`\gamma_{(j)}` stacks the first ``j`` blocks. The minimizer has a
leading run of zero blocks followed by blocks of ``b`` shrunk by cumulative
factors; both are read off a triangular table of thresholded cumulative
norms that a single left-to-right pass evaluates in O(q).

Scalar problems (all block sizes one) go through the same code path.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .exceptions import DimensionMismatchError

# Relative threshold below which a hinge value counts as an exact zero. It
# absorbs the few ulps of rounding in ``x - lam`` when ``lam`` was built to
# equal ``x`` exactly (e.g. at lambda_max).
_D_RTOL = 1e-14


@njit(cache=True, error_model="numpy")
def _hinge(x, lam):
    d = x - lam
    if d <= _D_RTOL * x:
        return 0.0
    return d


@njit(cache=True, error_model="numpy")
def _block_sq_norms(b, offsets, sq):
    q = offsets.size - 1
    for j in range(q):
        s = 0.0
        for i in range(offsets[j], offsets[j + 1]):
            s += b[i] * b[i]
        sq[j] = s


@njit(cache=True, error_model="numpy")
def _scan(sq, lam, d):
    """Single pass over the d-table; returns the 0-based start of the nonzero run.

    ``sq`` holds squared block norms, so each level costs one square root.
    ``d[j]`` receives the table entry of the final row for ``j`` at or after
    the returned index and zero before it. A return value of ``q`` means the
    whole vector is zero.
    """
    q = lam.size
    alpha = 0
    prev = 0.0
    for j in range(q):
        if j == alpha:
            x = math.sqrt(sq[j])
        else:
            x = math.sqrt(prev * prev + sq[j])
        cur = _hinge(x, lam[j])
        d[j] = cur
        if cur == 0.0:
            alpha = j + 1
        prev = cur
    for j in range(alpha):
        d[j] = 0.0
    return alpha


@njit(cache=True, error_model="numpy")
def _prox_into(b, lam, offsets, out, sq, d):
    """Write the minimizer of f into ``out``; returns the 0-based start index."""
    q = lam.size
    _block_sq_norms(b, offsets, sq)
    alpha = _scan(sq, lam, d)
    factor = 1.0
    for j in range(q - 1, -1, -1):
        lo = offsets[j]
        hi = offsets[j + 1]
        if j < alpha:
            for i in range(lo, hi):
                out[i] = 0.0
        else:
            factor *= d[j] / (d[j] + lam[j])
            for i in range(lo, hi):
                out[i] = factor * b[i]
    return alpha


@dataclass(frozen=True)
class ProxProblem:
    """Target vector ``b``, per-level penalties ``lam`` and block sizes."""

    b: np.ndarray
    lam: np.ndarray
    block_sizes: tuple = None
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        b = np.ascontiguousarray(self.b, dtype=float).ravel()
        lam = np.ascontiguousarray(self.lam, dtype=float).ravel()
        sizes = self.block_sizes
        if sizes is None:
            sizes = (1,) * lam.size
        sizes = tuple(int(m) for m in np.atleast_1d(sizes))
        if len(sizes) != lam.size:
            raise DimensionMismatchError(
                f"{lam.size} penalty levels but {len(sizes)} blocks"
            )
        if any(m < 1 for m in sizes):
            raise DimensionMismatchError(f"block sizes must be positive: {sizes}")
        if sum(sizes) != b.size:
            raise DimensionMismatchError(
                f"block sizes sum to {sum(sizes)} but b has {b.size} entries"
            )
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("penalty levels must be finite and non-negative")
        if not np.all(np.isfinite(b)):
            raise ValueError("b must be finite")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "block_sizes", sizes)
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        object.__setattr__(self, "offsets", offsets)

    @property
    def q(self):
        return self.lam.size

    def blocks(self, v):
        return [v[self.offsets[j] : self.offsets[j + 1]] for j in range(self.q)]


@dataclass(frozen=True)
class DScan:
    """Outcome of the d-table scan.

    ``alpha_star`` is 1-based; ``q + 1`` means the minimizer is zero.
    ``d[j]`` holds the entry of row ``alpha_star`` for levels at or after it.
    """

    alpha_star: int
    d: np.ndarray


def _check_conformal(gamma, prob):
    gamma = np.asarray(gamma, dtype=float).ravel()
    if gamma.size != prob.b.size:
        raise DimensionMismatchError(
            f"gamma has {gamma.size} entries, problem has {prob.b.size}"
        )
    return gamma


def evaluate_objective(gamma, prob):
    """Value of ``f(gamma)`` for the given problem."""
    gamma = _check_conformal(gamma, prob)
    prefix = np.sqrt(np.cumsum(gamma**2)[prob.offsets[1:] - 1])
    return float(0.5 * gamma @ gamma - prob.b @ gamma + prob.lam @ prefix)


def search_alpha_star(prob):
    sq = np.empty(prob.q)
    d = np.empty(prob.q)
    _block_sq_norms(prob.b, prob.offsets, sq)
    alpha = _scan(sq, prob.lam, d)
    return DScan(alpha_star=int(alpha) + 1, d=d)


def prox_solve(prob):
    """Unique global minimizer of ``f`` as a flat array."""
    out = np.empty_like(prob.b)
    _prox_into(prob.b, prob.lam, prob.offsets, out, np.empty(prob.q), np.empty(prob.q))
    return out


def full_d_table(prob):
    """Every entry ``d[alpha, j]`` of the triangular table, computed row by row.

    Quadratic in ``q``; meant as a reference for the single-pass scan.
    """
    q = prob.q
    norms = np.array([np.linalg.norm(blk) for blk in prob.blocks(prob.b)])
    D = np.zeros((q, q))
    for a in range(q):
        D[a, a] = max(norms[a] - prob.lam[a], 0.0)
        for j in range(a + 1, q):
            D[a, j] = max(np.sqrt(D[a, j - 1] ** 2 + norms[j] ** 2) - prob.lam[j], 0.0)
    return D


def exhaustive_alpha_star(prob):
    """First row of the full table whose entries from the diagonal on are all positive."""
    D = full_d_table(prob)
    for a in range(prob.q):
        if np.all(D[a, a:] > 0):
            return a + 1
    return prob.q + 1


def monotonicity_violations(prob, tol=1e-12):
    """Count pairs with ``d[a, j] < d[a + 1, j]`` in the full table (expected 0)."""
    D = full_d_table(prob)
    q = prob.q
    count = 0
    for a in range(q - 1):
        for j in range(a + 1, q):
            if D[a, j] < D[a + 1, j] - tol * (1.0 + D[a + 1, j]):
                count += 1
    return count


def verify_kkt(gamma, prob, tol=1e-8):
    """Check ``0 in subdifferential of f at gamma``.

    Blocks after the leading zero run must satisfy the smooth stationarity
    equations. For the zero run, ``b`` restricted to it must lie in the
    Minkowski sum of the nested balls of radii ``lam``; the distance to that
    set is accumulated level by level.

    Returns
    -------
    ok : bool
    residual : float
        Largest violation found (Euclidean, per block or distance to the
        subgradient set).
    """
    gamma = _check_conformal(gamma, prob)
    q = prob.q
    g_blocks = prob.blocks(gamma)
    b_blocks = prob.blocks(prob.b)
    a = 0
    while a < q and not np.any(g_blocks[a]):
        a += 1

    prefix = np.sqrt(np.cumsum([blk @ blk for blk in g_blocks]))
    residual = 0.0
    for j in range(a, q):
        coef = 1.0 + sum(prob.lam[l] / prefix[l] for l in range(j, q))
        r = coef * g_blocks[j] - b_blocks[j]
        residual = max(residual, float(np.linalg.norm(r)))

    dist = 0.0
    for j in range(a):
        dist = max(np.hypot(dist, np.linalg.norm(b_blocks[j])) - prob.lam[j], 0.0)
    residual = max(residual, float(dist))
    return residual <= tol, residual
