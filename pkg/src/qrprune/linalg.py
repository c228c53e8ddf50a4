"""Float64 matrix routines and representative-row selection.

Matrices are plain 2-D ``numpy.float64`` arrays.  The SVD is delegated to
LAPACK through numpy; the column-pivoted QR is implemented here so that the
pivot rule (largest residual norm, ties to the lowest index) is explicit.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import NumericError, ShapeError

PIVOT_TIE_RTOL = 1e-12
PINV_RTOL = 1e-10


class SVDResult(NamedTuple):
    U: np.ndarray
    singular_values: np.ndarray
    Vt: np.ndarray


class QRCPResult(NamedTuple):
    Q: np.ndarray
    R: np.ndarray
    perm: np.ndarray


def as_matrix(M) -> np.ndarray:
    M = np.array(M, dtype=np.float64, ndmin=2)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError("matrix contains non-finite values")
    return M


def svd(M, full_matrices: bool = False) -> SVDResult:
    M = as_matrix(M)
    U, s, Vt = np.linalg.svd(M, full_matrices=full_matrices)
    return SVDResult(U, s, Vt)


def qr_column_pivot(M, with_q: bool = True) -> QRCPResult:
    """Householder QR with column pivoting, ``M[:, perm] == Q @ R``.

    At step k the remaining column with the largest residual 2-norm becomes
    pivot k.  Norms are recomputed from the trailing block every step rather
    than downdated, trading a little speed for exact tie behaviour.  Columns
    whose norms agree within ``PIVOT_TIE_RTOL`` of the matrix scale are
    considered tied and the lowest original index wins.

    ``with_q=False`` skips accumulating Q (returned as None) when only the
    permutation and R are needed.
    """
    R = as_matrix(M).copy()
    m, n = R.shape
    steps = min(m, n)
    perm = np.arange(n)
    Q = np.eye(m) if with_q else None
    scale = max(np.linalg.norm(R, axis=0).max(), np.finfo(float).tiny)

    for k in range(steps):
        norms = np.linalg.norm(R[k:, k:], axis=0)
        best = norms.max()
        tied = np.flatnonzero(norms >= best - PIVOT_TIE_RTOL * max(best, scale))
        p = k + tied[np.argmin(perm[k + tied])]
        if p != k:
            R[:, [k, p]] = R[:, [p, k]]
            perm[[k, p]] = perm[[p, k]]

        x = R[k:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x.copy()
        v[0] += np.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        R[k:, k:] -= 2.0 * np.outer(v, v @ R[k:, k:])
        if with_q:
            Q[:, k:] -= 2.0 * np.outer(Q[:, k:] @ v, v)
        R[k + 1 :, k] = 0.0

    return QRCPResult(Q[:, :steps] if with_q else None, np.triu(R[:steps]), perm)


def pseudo_inverse(M, rel_tol: float = PINV_RTOL) -> np.ndarray:
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    U, s, Vt = svd(M)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((Vt.shape[1], U.shape[0]))
    inv = np.where(s >= rel_tol * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return (Vt.T * inv) @ U.T


def find_representative_rows(A, keep: int) -> np.ndarray:
    """Pick ``keep`` rows of ``A`` that best span its row space.

    Takes the leading ``keep`` left singular vectors of ``A`` and runs
    pivoted QR on their transpose; the first ``keep`` pivots are the chosen
    row indices, returned in pivot order.
    """
    A = as_matrix(A)
    n_rows = A.shape[0]
    if not 1 <= keep <= n_rows:
        raise ValueError(f"keep must lie in [1, {n_rows}], got {keep}")
    U = svd(A, full_matrices=keep > min(A.shape)).U
    return qr_column_pivot(U[:, :keep].T, with_q=False).perm[:keep].copy()


def least_squares_row(B, A_kept) -> np.ndarray:
    """Minimum-norm ``s`` minimizing ``||B - s @ A_kept||_2``."""
    B = as_matrix(B)
    A_kept = as_matrix(A_kept)
    if B.shape[0] != 1:
        raise ShapeError(f"B must be a single row, got shape {B.shape}")
    if B.shape[1] != A_kept.shape[1]:
        raise ShapeError(f"B has {B.shape[1]} columns but A_kept has {A_kept.shape[1]}")
    return (B @ pseudo_inverse(A_kept))[0]


def row_residual(B, A_kept, s) -> float:
    """Relative residual ``||B - s A_kept|| / ||B||`` (0 when B is zero)."""
    B = np.asarray(B, dtype=np.float64).reshape(-1)
    r = np.linalg.norm(B - np.asarray(s) @ np.asarray(A_kept, dtype=np.float64))
    nb = np.linalg.norm(B)
    return float(r / nb) if nb > 0 else float(r)
