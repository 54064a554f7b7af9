"""Dense matrix primitives shared by the solvers.

All functions are pure and work on small dense ``numpy`` arrays.
"""

import numpy as np
from scipy import linalg

from .exceptions import (
    InvalidDimensionError,
    NotPositiveDefiniteError,
    RankDeficientError,
    ZeroColumnError,
)

_ZERO_COLUMN_TOL = 1e-12
_PD_RTOL = 1e-12
_RANK_RTOL = 1e-10


def center_and_normalize_columns(M):
    """Center every column and scale it to unit Euclidean norm.

    Returns
    -------
    M_tilde : ndarray of shape (n, k)
    means : ndarray of shape (k,)
    scales : ndarray of shape (k,)
        ``M[:, j] == scales[j] * M_tilde[:, j] + means[j]``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InvalidDimensionError(f"expected a 2-d array, got ndim={M.ndim}")
    if M.shape[0] < 2:
        raise InvalidDimensionError("need at least two rows to center columns")
    means = M.mean(axis=0)
    centered = M - means
    scales = np.linalg.norm(centered, axis=0)
    ref = np.maximum(np.linalg.norm(M, axis=0), 1.0)
    bad = np.flatnonzero(scales <= _ZERO_COLUMN_TOL * ref)
    if bad.size:
        raise ZeroColumnError(f"column(s) {bad.tolist()} are constant")
    return centered / scales, means, scales


def sym_inverse_sqrt(S):
    """Symmetric inverse square root ``W`` with ``W @ S @ W == I``."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InvalidDimensionError(f"expected a square matrix, got {S.shape}")
    evals, evecs = np.linalg.eigh((S + S.T) / 2)
    top = evals[-1]
    if top <= 0 or evals[0] <= _PD_RTOL * top:
        raise NotPositiveDefiniteError(
            f"smallest eigenvalue {evals[0]:.3e} is not positive (largest {top:.3e})"
        )
    W = (evecs / np.sqrt(evals)) @ evecs.T
    return (W + W.T) / 2


def sym_sqrt(S):
    """Symmetric square root of a positive semi-definite matrix."""
    evals, evecs = np.linalg.eigh((np.asarray(S, float) + np.asarray(S, float).T) / 2)
    R = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    return (R + R.T) / 2


def max_eigenvalue_kron(G_A, G_V):
    """Largest eigenvalue of ``kron(G_A, G_V)`` for PSD factors."""
    a = np.linalg.eigvalsh(np.asarray(G_A, dtype=float))[-1]
    v = np.linalg.eigvalsh(np.asarray(G_V, dtype=float))[-1]
    return float(max(a, 0.0) * max(v, 0.0))


def flipped_qr(V):
    """QR decomposition of ``V`` taken from its last column backwards.

    Orthonormalizes ``v_q, v_{q-1}, ..., v_1`` in that order, so that
    ``V = H @ Q`` with ``H`` orthonormal and ``Q`` lower triangular. Because
    ``inv(Q.T)`` is upper triangular, a zero prefix in a row of ``Xi`` stays a
    zero prefix in the row of ``Xi @ inv(Q.T)``.

    Returns
    -------
    H : ndarray of shape (p, q)
    Q : ndarray of shape (q, q)
    """
    V = np.asarray(V, dtype=float)
    p, q = V.shape
    if p < q:
        raise InvalidDimensionError(f"need p >= q, got p={p}, q={q}")
    H0, Q0 = linalg.qr(V[:, ::-1], mode="economic")
    diag = np.diag(Q0)
    scale = np.max(np.abs(diag)) if q else 0.0
    if q and (scale == 0 or np.min(np.abs(diag)) <= _RANK_RTOL * scale):
        raise RankDeficientError("basis matrix is not of full column rank")
    signs = np.where(diag < 0, -1.0, 1.0)
    H0 = H0 * signs
    Q0 = signs[:, None] * Q0
    H = H0[:, ::-1].copy()
    Q = np.tril(Q0[::-1, ::-1])
    return H, Q


def check_full_column_rank(M, what="matrix"):
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if s.size == 0 or s[-1] <= _RANK_RTOL * s[0]:
        raise RankDeficientError(f"{what} is not of full column rank")
