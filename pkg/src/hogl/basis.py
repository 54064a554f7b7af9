"""Within-individual design matrices: polynomial and grouped Fourier bases."""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidDimensionError, RankDeficientError
from .kernels import check_full_column_rank


@dataclass(frozen=True)
class BasisSpec:
    """Level structure of a basis: ``block_sizes[j]`` columns enter at level j.

    Columns are ordered from the highest level (first block) down to the
    constant (last block), matching the order in which hierarchical zeros are
    introduced.
    """

    kind: str
    block_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(m) for m in self.block_sizes)
        if not sizes or min(sizes) < 1:
            raise InvalidDimensionError(f"block sizes must be positive, got {sizes}")
        object.__setattr__(self, "block_sizes", sizes)
        if self.kind == "polynomial" and any(m != 1 for m in sizes):
            raise InvalidDimensionError("polynomial basis has unit blocks")
        if self.kind == "fourier" and (sizes[-1] != 1 or any(m != 2 for m in sizes[:-1])):
            raise InvalidDimensionError("fourier basis has blocks (2, ..., 2, 1)")

    @property
    def q(self):
        return len(self.block_sizes)

    @property
    def dim(self):
        return sum(self.block_sizes)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.block_sizes)]).astype(np.int64)

    @classmethod
    def scalar(cls, q, kind="polynomial"):
        return cls(kind, (1,) * int(q))


def uniform_time_points(p):
    """``p`` equally spaced points on [-1, 1], endpoints included."""
    if int(p) != p or p < 2:
        raise InvalidDimensionError(f"need p >= 2 time points, got {p}")
    p = int(p)
    j = np.arange(1, p + 1)
    return 2.0 * (j - 1) / (p - 1) - 1.0


def _check_grid(t):
    t = np.asarray(t, dtype=float).ravel()
    if t.size < 2:
        raise InvalidDimensionError("need at least two time points")
    return t


def polynomial_basis(t, q):
    """Standardized polynomial basis of degree ``q - 1``.

    Column j (0-based) is ``t**(q-1-j)`` scaled to unit norm, so the last
    column is the constant ``p**-0.5``.
    """
    t = _check_grid(t)
    if q < 1 or q > t.size:
        raise InvalidDimensionError(f"need 1 <= q <= p, got q={q}, p={t.size}")
    powers = np.arange(q - 1, -1, -1)
    X = t[:, None] ** powers[None, :]
    X = X / np.linalg.norm(X, axis=0)
    check_full_column_rank(X, "polynomial basis")
    return X


def fourier_basis(t, q):
    """Grouped Fourier basis ``(cos (q-1)t, sin (q-1)t, ..., cos t, sin t, 1)``.

    Every column is scaled to unit norm. Returns the ``p x (2q-1)`` matrix and
    the matching :class:`BasisSpec` with blocks ``(2, ..., 2, 1)``.
    """
    t = _check_grid(t)
    if q < 2:
        raise InvalidDimensionError(f"fourier basis needs q >= 2, got {q}")
    cols = []
    for h in range(q - 1, 0, -1):
        cols.append(np.cos(h * t))
        cols.append(np.sin(h * t))
    cols.append(np.ones_like(t))
    X = np.column_stack(cols)
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        raise RankDeficientError("fourier basis has an identically zero column")
    X = X / norms
    check_full_column_rank(X, "fourier basis")
    return X, BasisSpec("fourier", (2,) * (q - 1) + (1,))
