"""Information weights, standard/sandwich covariance of theta_hat, z-scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import FitResult, Method
from .exceptions import SingularInformationError, SingularModelError
from .matrixkit import duplication_matrix, guarded_inverse
from .moments import MomentSet, gamma_normal

VARIANTS = ("S", "observed_M", "expected_M")


@dataclass(eq=False)
class SeResult:
    se: np.ndarray
    kind: str
    cov_theta: np.ndarray
    z: np.ndarray


def information_weight(variant: str, S, Sigma_hat) -> np.ndarray:
    """sigma-space information matrix used as the ML weight.

    ``expected_M`` is Gamma_N(Sigma_hat)^{-1}, ``S`` is Gamma_N(S)^{-1}, and
    ``observed_M`` is half the Hessian of the ML discrepancy in vech(Sigma)
    at Sigma_hat with S held fixed:
    1/2 D'[(A kron B) + (B kron A) - (B kron B)]D, B = Sigma^{-1},
    A = Sigma^{-1} S Sigma^{-1}. All three coincide when S == Sigma_hat.
    """
    if variant == "expected_M":
        W, _ = guarded_inverse(gamma_normal(Sigma_hat))
        return W
    if variant == "S":
        W, _ = guarded_inverse(gamma_normal(S))
        return W
    if variant != "observed_M":
        raise ValueError(f"unknown information variant '{variant}'")
    Sigma_hat = np.asarray(Sigma_hat, float)
    try:
        B = np.linalg.inv(Sigma_hat)
    except np.linalg.LinAlgError:
        raise SingularModelError("Sigma_hat is singular") from None
    A = B @ np.asarray(S, float) @ B
    D = duplication_matrix(Sigma_hat.shape[0])
    K = np.kron(A, B) + np.kron(B, A) - np.kron(B, B)
    W = 0.5 * D.T @ K @ D
    return 0.5 * (W + W.T)


def _bread(jac, W):
    H = jac.T @ W @ jac
    try:
        Hinv, _ = guarded_inverse(H)
    except Exception as exc:
        raise SingularInformationError(f"sigma_dot' W sigma_dot is singular: {exc}") from None
    return Hinv


def standard_cov(jac, W, n: int) -> np.ndarray:
    """(sigma_dot' W sigma_dot)^{-1} / N."""
    return _bread(jac, W) / n


def sandwich_cov(jac, W, gamma_adf, n: int) -> np.ndarray:
    """Robust covariance of theta_hat (already divided by N).

    (J'WJ)^{-1} J'W Gamma W J (J'WJ)^{-1} / N.
    """
    jac = np.asarray(jac, float)
    W = np.asarray(W, float)
    Hinv = _bread(jac, W)
    WJ = W @ jac
    meat = WJ.T @ np.asarray(gamma_adf, float) @ WJ
    C = Hinv @ meat @ Hinv / n
    return 0.5 * (C + C.T)


def _ml_variant(method: Method) -> str:
    return {Method.ML_S: "S", Method.ML_OM: "observed_M", Method.ML_EM: "expected_M"}[method]


def standard_errors(fit: FitResult, moments: MomentSet, se: str = "auto", information: str | None = None) -> SeResult:
    """Standard errors for a converged fit.

    With ``se="auto"`` DLS at a == 1 gets normal-theory standard errors and
    every other method the sandwich form with Gamma_ADF. ``se`` may force
    ``"standard"`` or ``"sandwich"``. For ML fits ``information`` overrides
    the method's information variant (one of :data:`VARIANTS`).
    """
    if not fit.converged:
        raise ValueError("standard errors require a converged fit")
    method = fit.method
    if information is not None and information not in VARIANTS:
        raise ValueError(f"unknown information variant '{information}'")
    if method.is_ml:
        W = information_weight(information or _ml_variant(method), moments.S, fit.sigma)
    else:
        W = fit.weight
    if se == "auto":
        kind = "standard" if (method in (Method.DLS_S, Method.DLS_M) and fit.a == 1.0) else "sandwich"
    elif se in ("standard", "sandwich"):
        kind = se
    else:
        raise ValueError(f"unknown SE kind '{se}'")
    if kind == "sandwich":
        if moments.gamma_adf is None:
            raise ValueError("sandwich standard errors need fourth-order moments")
        cov = sandwich_cov(fit.jac, W, moments.gamma_adf, moments.n)
    else:
        cov = standard_cov(fit.jac, W, moments.n)
    se_vec = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = fit.theta / se_vec
    return SeResult(se=se_vec, kind=kind, cov_theta=cov, z=z)
