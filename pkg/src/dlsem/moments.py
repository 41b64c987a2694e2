"""Second- and fourth-order sample moments.

All divisors are N. Gamma matrices are indexed by the canonical vech pair
order of :func:`dlsem.matrixkit.pair_index`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import InvalidDataError
from .matrixkit import pair_index, vech


def _as_data(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InvalidDataError(f"data must be 2-D, got shape {X.shape}")
    if X.shape[0] < 2:
        raise InvalidDataError(f"need at least 2 observations, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise InvalidDataError("data contain missing or non-finite values")
    return X


def sample_cov(X) -> np.ndarray:
    """S = (1/N) sum (x_i - xbar)(x_i - xbar)'."""
    X = _as_data(X)
    Z = X - X.mean(axis=0)
    S = Z.T @ Z / X.shape[0]
    return 0.5 * (S + S.T)


def gamma_adf(X) -> np.ndarray:
    """Distribution-free estimate of Gamma: s_hjkl - s_hj s_kl.

    Built from the per-observation centered pair products, so the cost is
    O(N p*^2).
    """
    X = _as_data(X)
    Z = X - X.mean(axis=0)
    r, c = pair_index(X.shape[1])
    P = Z[:, r] * Z[:, c]
    s = P.mean(axis=0)
    G = P.T @ P / X.shape[0] - np.outer(s, s)
    return 0.5 * (G + G.T)


@lru_cache(maxsize=16)
def _normal_index(p: int):
    r, c = pair_index(p)
    return r[:, None] * p + r, c[:, None] * p + c, r[:, None] * p + c, c[:, None] * p + r


def gamma_normal(C) -> np.ndarray:
    """Normal-theory Gamma: c_hk c_jl + c_hl c_jk over vech pairs (hj, kl)."""
    C = np.asarray(C, dtype=float)
    rr, cc, rc, cr = _normal_index(C.shape[0])
    flat = C.ravel()
    G = flat[rr] * flat[cc] + flat[rc] * flat[cr]
    return 0.5 * (G + G.T)


def _mahalanobis_cross(X) -> np.ndarray:
    X = _as_data(X)
    Z = X - X.mean(axis=0)
    S = Z.T @ Z / X.shape[0]
    try:
        Sinv = np.linalg.inv(S)
        cond = np.linalg.cond(S)
    except np.linalg.LinAlgError:
        raise InvalidDataError("sample covariance is singular") from None
    if not np.isfinite(cond) or cond > 1e14:
        raise InvalidDataError("sample covariance is singular")
    return Z @ Sinv @ Z.T


def multivariate_skewness(X) -> float:
    """sum_ij d_ij^3 / (N p (p+1) (p+2)); about 1 for normal data."""
    X = _as_data(X)
    n, p = X.shape
    D = _mahalanobis_cross(X)
    return float(np.sum(D**3) / (n * p * (p + 1) * (p + 2)))


def multivariate_kurtosis(X) -> float:
    """sum_i d_ii^2 / (N p (p+2)); about 1 for normal data."""
    X = _as_data(X)
    n, p = X.shape
    d = np.diag(_mahalanobis_cross(X))
    return float(np.sum(d**2) / (n * p * (p + 2)))


@dataclass(frozen=True, eq=False)
class MomentSet:
    """Sample moments of one dataset.

    ``gamma_adf`` may be None when only second moments were supplied
    (methods needing fourth moments will then refuse to run).
    """

    S: np.ndarray
    n: int
    gamma_adf: np.ndarray | None = None

    @property
    def s(self) -> np.ndarray:
        return vech(self.S)

    @property
    def p(self) -> int:
        return self.S.shape[0]

    @classmethod
    def from_data(cls, X) -> "MomentSet":
        X = _as_data(X)
        return cls(S=sample_cov(X), n=X.shape[0], gamma_adf=gamma_adf(X))

    def gamma_normal_sample(self) -> np.ndarray:
        return gamma_normal(self.S)
