"""Simulation populations, the four distributional conditions, and resampling.

Data follow x = Lambda xi + eps with xi = r Phi^{1/2} z_xi and
eps = r Psi^{1/2} z_eps. The conditions differ in the radial factor r and in
the marginal law of z_xi / z_eps:

=============  =====================  ==================  ===================
condition      r                      z_xi                z_eps
=============  =====================  ==================  ===================
normal         1                      N(0, 1)             N(0, 1)
elliptical     sqrt(3 / chi2_5)       N(0, 1)             N(0, 1)
skewed_factor  sqrt(3 / chi2_5)       std. chi2_1         N(0, 1)
skewed_error   sqrt(3 / chi2_5)       N(0, 1)             std. chi2_1
=============  =====================  ==================  ===================

E(r^2) = 1, so every condition has covariance Sigma_pop.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import NotPSDError, SpecError
from .matrixkit import inv_sym_sqrt, sym_sqrt
from .model import ModelSpec, implied_covariance
from .moments import _as_data, sample_cov

LOADING_GRID = (0.70, 0.75, 0.80, 0.85, 0.90, 0.95)
FACTOR_CORRELATION = 0.5


class Condition(str, enum.Enum):
    NORMAL = "normal"
    ELLIPTICAL = "elliptical"
    SKEWED_FACTOR = "skewed_factor"
    SKEWED_ERROR = "skewed_error"

    @classmethod
    def parse(cls, name) -> "Condition":
        """Accept ``skewed-factor`` as well as ``skewed_factor``."""
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(c.cli_name for c in cls)
            raise ValueError(f"unknown condition '{name}' (expected one of: {valid})") from None

    @property
    def cli_name(self) -> str:
        return self.value.replace("_", "-")


@dataclass(frozen=True, eq=False)
class PopulationModel:
    spec: ModelSpec
    theta_true: np.ndarray
    Lambda: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    Sigma_pop: np.ndarray


def make_rng(seed, *stream) -> np.random.Generator:
    """Counter-based generator for (seed, *stream); independent of call order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def build_population(p: int, m: int, seed: int) -> PopulationModel:
    """Simple-structure population with unit-variance indicators.

    Loadings are drawn uniformly from {.70, .75, ..., .95}, factor
    correlations are 0.5 and each residual variance is 1 - (Lambda Phi Lambda')_jj.
    """
    spec = ModelSpec.simple_structure(p, m)
    rng = make_rng(seed)
    Lambda = np.where(spec.loading_index >= 0, rng.choice(LOADING_GRID, size=(p, m)), 0.0)
    Phi = np.full((m, m), FACTOR_CORRELATION)
    np.fill_diagonal(Phi, 1.0)
    psi = 1.0 - np.einsum("jk,kl,jl->j", Lambda, Phi, Lambda)
    if np.any(psi <= 0):
        raise SpecError("population residual variance is not positive")
    theta = spec.pack(Lambda, Phi, psi)
    return PopulationModel(
        spec=spec, theta_true=theta, Lambda=Lambda, Phi=Phi, Psi=np.diag(psi),
        Sigma_pop=implied_covariance(spec, theta),
    )


def _std_chi2_1(rng, size) -> np.ndarray:
    z = rng.standard_normal(size)
    return (z * z - 1.0) / np.sqrt(2.0)


def generate(pop: PopulationModel, n: int, cond, seed, shared_radial: bool = True) -> np.ndarray:
    """Draw an (n, p) data matrix under ``cond``.

    Parameters
    ----------
    shared_radial : bool
        One r per observation scales both xi and eps (default). If False, xi
        and eps get independent radial draws.
    """
    cond = Condition.parse(cond)
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = make_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    p, m = pop.Lambda.shape
    if cond is Condition.SKEWED_FACTOR:
        z_xi = _std_chi2_1(rng, (n, m))
    else:
        z_xi = rng.standard_normal((n, m))
    if cond is Condition.SKEWED_ERROR:
        z_eps = _std_chi2_1(rng, (n, p))
    else:
        z_eps = rng.standard_normal((n, p))
    xi = z_xi @ sym_sqrt(pop.Phi)
    eps = z_eps * np.sqrt(np.diag(pop.Psi))
    if cond is not Condition.NORMAL:
        r = np.sqrt(3.0 / rng.chisquare(5, size=n))
        r_eps = r if shared_radial else np.sqrt(3.0 / rng.chisquare(5, size=n))
        xi = xi * r[:, None]
        eps = eps * r_eps[:, None]
    return xi @ pop.Lambda.T + eps


def bollen_stine_transform(X, Sigma_hat) -> np.ndarray:
    """x0_i = Sigma_hat^{1/2} S^{-1/2} x_i, so that sample_cov(x0) == Sigma_hat."""
    X = _as_data(X)
    Sigma_hat = np.asarray(Sigma_hat, float)
    if not np.all(np.linalg.eigvalsh(Sigma_hat) > 0):
        raise NotPSDError("Sigma_hat is not positive definite")
    T = sym_sqrt(Sigma_hat) @ inv_sym_sqrt(sample_cov(X))
    return X @ T.T


def bootstrap_sample(X, seed) -> np.ndarray:
    """n rows drawn uniformly with replacement."""
    X = np.asarray(X)
    if X.shape[0] < 1:
        raise ValueError("need at least one row")
    rng = make_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    return X[rng.integers(0, X.shape[0], X.shape[0])]
