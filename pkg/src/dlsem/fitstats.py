"""Model fit statistic T and its scaled/adjusted versions.

T = (N-1)F for the GLS family and N F for maximum likelihood.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import gammaincc

from .exceptions import DegenerateStatisticError, SingularInformationError
from .matrixkit import RANK_REL_TOL, guarded_inverse, rank_with_tol


@dataclass
class FitStatistics:
    T: float
    df: int
    c_sb: float
    c_mva: float
    c_jy: float
    t_sb: float
    t_mva: float
    t_jy: float
    df_star: float
    rank_ug: int
    p_t: float
    p_sb: float
    p_mva: float
    p_jy: float
    p_jy_df: float

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else int(v)) for k, v in asdict(self).items()}


def chisq_sf(x: float, df: float) -> float:
    """Upper tail of chi-square(df) via the regularized upper incomplete gamma."""
    if x <= 0:
        return 1.0
    return float(gammaincc(0.5 * df, 0.5 * x))


def u_matrix(W, jac) -> np.ndarray:
    """U = W - W J (J'WJ)^{-1} J'W."""
    W = np.asarray(W, float)
    jac = np.asarray(jac, float)
    WJ = W @ jac
    try:
        Hinv, _ = guarded_inverse(jac.T @ WJ)
    except Exception as exc:
        raise SingularInformationError(f"sigma_dot' W sigma_dot is singular: {exc}") from None
    U = W - WJ @ Hinv @ WJ.T
    return 0.5 * (U + U.T)


def base_statistic(loss: float, n: int, ml: bool = False) -> float:
    """(N-1) F, or N F when ``ml`` is true."""
    return (n if ml else n - 1) * float(loss)


def adjusted_statistics(T: float, U, gamma_adf, df: int, rel_tol: float = RANK_REL_TOL) -> FitStatistics:
    """Satorra-Bentler, mean-and-variance adjusted, and rank-adjusted statistics.

    T_JY is referred to chi-square with rank(U Gamma) degrees of freedom;
    ``p_jy_df`` gives the alternative chi-square(df) reference.
    """
    UG = np.asarray(U, float) @ np.asarray(gamma_adf, float)
    tr = float(np.trace(UG))
    tr2 = float(np.sum(UG * UG.T))
    if not tr > 0:
        raise DegenerateStatisticError(f"tr(U Gamma) = {tr:.3g} is not positive")
    rank = rank_with_tol(UG, rel_tol)
    c_sb = tr / df
    c_mva = tr2 / tr
    c_jy = tr / rank
    df_star = tr * tr / tr2
    t_sb, t_mva, t_jy = T / c_sb, T / c_mva, T / c_jy
    return FitStatistics(
        T=T, df=df, c_sb=c_sb, c_mva=c_mva, c_jy=c_jy,
        t_sb=t_sb, t_mva=t_mva, t_jy=t_jy, df_star=df_star, rank_ug=rank,
        p_t=chisq_sf(T, df), p_sb=chisq_sf(t_sb, df), p_mva=chisq_sf(t_mva, df_star),
        p_jy=chisq_sf(t_jy, rank), p_jy_df=chisq_sf(t_jy, df),
    )


def fit_statistics(fit, moments, rel_tol: float = RANK_REL_TOL) -> FitStatistics:
    """All statistics for a converged FitResult, using its final weight."""
    if not fit.converged:
        raise ValueError("fit statistics require a converged fit")
    df = fit.jac.shape[0] - fit.jac.shape[1]
    T = base_statistic(fit.loss, moments.n, ml=fit.method.is_ml)
    U = u_matrix(fit.weight, fit.jac)
    return adjusted_statistics(T, U, moments.gamma_adf, df, rel_tol)
