"""Symmetric-matrix helpers: half-vectorization, square roots, guarded inversion.

Every p*-indexed quantity in the package (s, sigma, Gamma, W) uses the pair
ordering returned by :func:`pair_index`: column-major lower triangle, i.e.
(0,0), (1,0), ..., (p-1,0), (1,1), (2,1), ...
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import lapack

from .exceptions import DimensionError, NotPSDError, SingularWeightError

RCOND_MIN = 1e-14
RANK_REL_TOL = 1e-8


def n_unique(p: int) -> int:
    """Number of non-duplicated elements p* = p(p+1)/2."""
    return p * (p + 1) // 2


def dim_from_length(length: int) -> int:
    """Invert p* = p(p+1)/2, raising DimensionError if length is not triangular."""
    p = int(round((np.sqrt(8 * length + 1) - 1) / 2))
    if p < 1 or n_unique(p) != length:
        raise DimensionError(f"length {length} is not a triangular number")
    return p


@lru_cache(maxsize=64)
def pair_index(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices (rows >= cols) of the canonical vech ordering."""
    rows, cols = [], []
    for j in range(p):
        for i in range(j, p):
            rows.append(i)
            cols.append(j)
    r = np.array(rows, dtype=np.intp)
    c = np.array(cols, dtype=np.intp)
    r.setflags(write=False)
    c.setflags(write=False)
    return r, c


def symmetrize(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    return 0.5 * (M + M.T)


def vech(M) -> np.ndarray:
    """Stack the lower triangle of ``M`` column by column."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    r, c = pair_index(M.shape[0])
    return M[r, c].copy()


def unvech(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    p = dim_from_length(v.size)
    r, c = pair_index(p)
    M = np.zeros((p, p))
    M[r, c] = v
    M[c, r] = v
    return M


@lru_cache(maxsize=16)
def duplication_matrix(p: int) -> np.ndarray:
    """D such that vec(M) = D vech(M) for symmetric M (vec is column-major)."""
    r, c = pair_index(p)
    D = np.zeros((p * p, r.size))
    k = np.arange(r.size)
    D[r + c * p, k] = 1.0
    D[c + r * p, k] = 1.0
    D.setflags(write=False)
    return D


def sym_sqrt(M, tol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square root via the eigendecomposition.

    Eigenvalues in [-tol*max_eig, 0) are treated as rounding noise and
    clipped to zero.
    """
    M = symmetrize(M)
    w, V = np.linalg.eigh(M)
    scale = max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    if w.min() < -tol * scale:
        raise NotPSDError(f"matrix has eigenvalue {w.min():.3g} (max {scale:.3g})")
    w = np.clip(w, 0.0, None)
    R = (V * np.sqrt(w)) @ V.T
    return 0.5 * (R + R.T)


def inv_sym_sqrt(M) -> np.ndarray:
    """M^{-1/2} for symmetric positive definite M."""
    M = symmetrize(M)
    w, V = np.linalg.eigh(M)
    if w.min() <= 0:
        raise NotPSDError(f"matrix is not positive definite (min eigenvalue {w.min():.3g})")
    R = (V / np.sqrt(w)) @ V.T
    return 0.5 * (R + R.T)


def guarded_inverse(M, rcond_min: float = RCOND_MIN) -> tuple[np.ndarray, float]:
    """Invert a symmetric matrix, returning ``(inverse, rcond)``.

    Positive definite input goes through Cholesky with a LAPACK 1-norm
    condition estimate. Indefinite input falls back to the eigendecomposition,
    where rcond is the exact 2-norm ratio min|eig|/max|eig|.

    Raises
    ------
    SingularWeightError
        If the reciprocal condition number is below ``rcond_min``.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n == 0:
        raise DimensionError("empty matrix")
    anorm = float(np.max(np.sum(np.abs(M), axis=0)))
    if not np.isfinite(anorm):
        raise SingularWeightError("matrix has non-finite entries", rcond=0.0)
    if anorm == 0.0:
        raise SingularWeightError("matrix is zero", rcond=0.0)
    chol, info = lapack.dpotrf(M, lower=1, clean=1)
    if info == 0:
        rcond, info = lapack.dpocon(chol, anorm, uplo="L")
        if rcond < rcond_min:
            raise SingularWeightError(f"reciprocal condition {rcond:.3g} below {rcond_min:g}", rcond=rcond)
        inv, info = lapack.dpotri(chol, lower=1)
        lower = np.tril(inv)
        return lower + lower.T - np.diag(np.diag(inv)), float(rcond)
    w, V = np.linalg.eigh(symmetrize(M))
    aw = np.abs(w)
    rcond = float(aw.min() / aw.max())
    if rcond < rcond_min:
        raise SingularWeightError(f"reciprocal condition {rcond:.3g} below {rcond_min:g}", rcond=rcond)
    inv = (V / w) @ V.T
    return 0.5 * (inv + inv.T), rcond


def rank_with_tol(M, rel_tol: float = RANK_REL_TOL) -> int:
    """Number of singular values above ``rel_tol`` times the largest one."""
    sv = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))
