"""Weight matrices, discrepancy functions and the reweighted Gauss-Newton fitter."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import InvalidDataError, SingularModelError, SingularWeightError
from .matrixkit import guarded_inverse, pair_index, vech
from .model import ModelSpec, curvature, implied_covariance, jacobian, start_values
from .moments import MomentSet, gamma_normal


class Method(str, enum.Enum):
    DLS_S = "DLS_S"
    DLS_M = "DLS_M"
    GLS_S = "GLS_S"
    GLS_M = "GLS_M"
    WLS = "WLS"
    RGLS_D = "RGLS_D"
    RGLS_I = "RGLS_I"
    LS = "LS"
    ML_S = "ML_S"
    ML_OM = "ML_OM"
    ML_EM = "ML_EM"

    @classmethod
    def parse(cls, name) -> "Method":
        """Accept ``DLS_M``, ``dls-m``, ``dls_m``, ``ML_E.M`` and similar spellings."""
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("-", "_").replace(".", "")
        if key == "ML":
            key = "ML_EM"
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(m.cli_name for m in cls)
            raise ValueError(f"unknown method '{name}' (expected one of: {valid})") from None

    @property
    def cli_name(self) -> str:
        return self.value.lower().replace("_", "-")

    @property
    def tuned(self) -> bool:
        return self in TUNED

    @property
    def is_ml(self) -> bool:
        return self in (Method.ML_S, Method.ML_OM, Method.ML_EM)

    @property
    def model_implied(self) -> bool:
        """Weight depends on Sigma(theta) and is rebuilt every iteration."""
        return self in (Method.DLS_M, Method.GLS_M) or self.is_ml

    @property
    def needs_adf(self) -> bool:
        return self in (Method.DLS_S, Method.DLS_M, Method.WLS, Method.RGLS_D, Method.RGLS_I)


TUNED = frozenset({Method.DLS_S, Method.DLS_M, Method.RGLS_D, Method.RGLS_I})


@dataclass(frozen=True)
class FitOptions:
    """Iteration controls.

    Once the Gauss-Newton step is below ``newton_switch`` (relative), and
    ``newton`` is on, GLS-family fits switch to second-order steps: the full
    Hessian of the fixed-W discrepancy for static weights, and Newton on the
    estimating equation J'W(theta)(s - sigma) = 0 for DLS_M/GLS_M. The
    solution is unchanged, only reached in fewer iterations.
    """

    max_iterations: int = 200
    param_tol: float = 1e-6
    grad_tol: float = 1e-8
    step_halvings: int = 20
    max_nonpd: int = 5
    newton: bool = True
    newton_switch: float = 0.1


@dataclass(eq=False)
class FitResult:
    """Outcome of one estimation run.

    ``weight`` is the final W evaluated at theta_hat (for ML, the expected
    information Gamma_N(Sigma_hat)^{-1}); ``gradient_norm`` is the Newton
    decrement sqrt(g' H^{-1} g) of the last iteration.
    """

    method: Method
    a: float
    theta: np.ndarray
    loss: float
    converged: bool
    iterations: int
    heywood: bool
    weight: np.ndarray | None
    gradient_norm: float
    reason: str = ""
    sigma: np.ndarray | None = None
    jac: np.ndarray | None = None
    n: int = 0
    diagnostics: list = field(default_factory=list)


def build_weight(method, gamma_adf, gamma_n=None, a: float = 1.0) -> np.ndarray:
    """Weight matrix W for a GLS-family method.

    ``gamma_n`` is Gamma_N.S for the _S methods and Gamma_N.M for the _M
    methods. ML methods use ``gamma_n`` as Gamma_N (Fisher scoring weight).
    """
    method = Method.parse(method)
    if method is Method.LS:
        n = (gamma_adf if gamma_adf is not None else gamma_n).shape[0]
        return np.eye(n)
    if method is Method.WLS:
        blend = gamma_adf
    elif method in (Method.GLS_S, Method.GLS_M) or method.is_ml:
        blend = gamma_n
    elif method in (Method.DLS_S, Method.DLS_M):
        blend = (1.0 - a) * gamma_adf + a * gamma_n
    elif method is Method.RGLS_D:
        blend = (1.0 - a) * gamma_adf + a * np.diag(np.diag(gamma_adf))
    elif method is Method.RGLS_I:
        blend = (1.0 - a) * gamma_adf + a * np.eye(gamma_adf.shape[0])
    else:  # pragma: no cover
        raise ValueError(method)
    W, _ = guarded_inverse(blend)
    return W


def gls_loss(s, sigma, W) -> float:
    """[s - sigma]' W [s - sigma]."""
    r = np.asarray(s, float) - np.asarray(sigma, float)
    return float(r @ np.asarray(W, float) @ r)


def ml_loss(S, Sigma) -> float:
    """tr(S Sigma^{-1}) - log|S Sigma^{-1}| - p.

    Raises SingularModelError if Sigma is not positive definite.
    """
    S = np.asarray(S, float)
    Sigma = np.asarray(Sigma, float)
    try:
        c, low = cho_factor(Sigma, lower=True)
    except np.linalg.LinAlgError:
        raise SingularModelError("model-implied covariance is not positive definite") from None
    logdet_sigma = 2.0 * np.sum(np.log(np.diag(c)))
    sign, logdet_s = np.linalg.slogdet(S)
    if sign <= 0:
        raise InvalidDataError("sample covariance is not positive definite")
    tr = np.trace(cho_solve((c, low), S))
    return float(tr - logdet_s + logdet_sigma - S.shape[0])


def _is_pd(M) -> bool:
    try:
        np.linalg.cholesky(M)
        return True
    except np.linalg.LinAlgError:
        return False


def _failed(method, a, theta, it, reason, spec, n, diag, W=None, gnorm=np.nan):
    return FitResult(
        method=method, a=a, theta=theta, loss=np.nan, converged=False, iterations=it,
        heywood=bool(_heywood(spec, theta)), weight=W, gradient_norm=gnorm,
        reason=reason, n=n, diagnostics=diag,
    )


def _heywood(spec: ModelSpec, theta) -> bool:
    _, _, psi = spec.matrices(theta)
    return bool(np.any(psi <= 0))


def fit(data, spec: ModelSpec, method, a: float = 1.0, options: FitOptions | None = None, start=None) -> FitResult:
    """Estimate theta by minimizing the method's discrepancy function.

    Parameters
    ----------
    data : array (N, p) or MomentSet
        Raw data or precomputed moments.
    spec : ModelSpec
    method : Method or str
    a : float
        Tuning parameter in [0, 1]; ignored by untuned methods.
    options : FitOptions, optional
    start : array, optional
        Starting theta; defaults to :func:`start_values`.

    Returns
    -------
    FitResult
        Failures (singular weights, iteration cap, failed line search) are
        reported through ``converged=False`` and ``reason``, never raised.
    """
    method = Method.parse(method)
    a = float(a)
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"tuning parameter a={a} outside [0, 1]")
    opts = options or FitOptions()
    moments = data if isinstance(data, MomentSet) else MomentSet.from_data(data)
    if moments.p != spec.p:
        raise InvalidDataError(f"data have {moments.p} variables, model expects {spec.p}")
    if method.needs_adf and moments.gamma_adf is None:
        raise InvalidDataError(f"{method.value} needs raw data for fourth-order moments")

    S, s, n = moments.S, moments.s, moments.n
    G_adf = moments.gamma_adf
    theta = np.array(start if start is not None else start_values(spec, S), dtype=float)
    diag: list = []

    static_W = None
    if not method.model_implied:
        G_n = gamma_normal(S) if method in (Method.GLS_S, Method.DLS_S) else None
        try:
            if method is Method.LS:
                static_W = np.eye(s.size)
            else:
                static_W = build_weight(method, G_adf, G_n, a)
        except SingularWeightError as exc:
            return _failed(method, a, theta, 0, f"singular_weight: {exc}", spec, n, diag)

    def weight_at(Sigma):
        if static_W is not None:
            return static_W
        return build_weight(method, G_adf, gamma_normal(Sigma), a)

    def loss_at(th, W):
        Sigma = implied_covariance(spec, th)
        if method.is_ml:
            try:
                return ml_loss(S, Sigma)
            except SingularModelError:
                return np.inf
        return gls_loss(s, vech(Sigma), W)

    a_gn = 1.0 if method is Method.GLS_M else a
    root_newton = opts.newton and method in (Method.DLS_M, Method.GLS_M)

    def merit(th):
        """Newton decrement of the estimating equation at th (reweighted)."""
        Sig = implied_covariance(spec, th)
        if not _is_pd(Sig):
            return np.inf
        try:
            Wt = weight_at(Sig)
        except SingularWeightError:
            return np.inf
        Jt = jacobian(spec, th)
        cache.update(theta=th, W=Wt, J=Jt)
        WJt = Wt @ Jt
        gt = WJt.T @ (s - vech(Sig))
        try:
            return float(gt @ cho_solve(cho_factor(Jt.T @ WJt, lower=True), gt))
        except (np.linalg.LinAlgError, ValueError):
            return np.inf

    cache: dict = {}
    W = None
    nonpd_run = 0
    gnorm = np.nan
    for it in range(1, opts.max_iterations + 1):
        Sigma = implied_covariance(spec, theta)
        hit = cache.get("theta") is theta
        if static_W is None:
            if hit:
                W = cache["W"]
                nonpd_run = 0
            elif _is_pd(Sigma):
                try:
                    W = weight_at(Sigma)
                    nonpd_run = 0
                except SingularWeightError as exc:
                    return _failed(method, a, theta, it, f"singular_weight: {exc}", spec, n, diag, W)
            else:
                nonpd_run += 1
                diag.append(f"iteration {it}: Sigma(theta) not positive definite, previous weight reused")
                if W is None or nonpd_run >= opts.max_nonpd:
                    return _failed(method, a, theta, it, "nonpd_sigma", spec, n, diag, W)
        else:
            W = static_W
        J = cache["J"] if hit else jacobian(spec, theta)
        resid = s - vech(Sigma)
        WJ = W @ J
        H = J.T @ WJ
        g = WJ.T @ resid
        try:
            cf = cho_factor(H, lower=True)
            gn_step = cho_solve(cf, g)
        except (np.linalg.LinAlgError, ValueError):
            return _failed(method, a, theta, it, "singular_step", spec, n, diag, W)
        gnorm = float(np.sqrt(max(g @ gn_step, 0.0)))

        step = None
        gn_rel = float(np.max(np.abs(gn_step) / (1.0 + np.abs(theta))))
        if opts.newton and not method.is_ml and gn_rel < opts.newton_switch:
            u = W @ resid
            A = H - curvature(spec, theta, u)
            if root_newton and nonpd_run == 0:
                A = A + a_gn * WJ.T @ _gamma_n_derivative(spec, J, Sigma, u)
            try:
                if root_newton:
                    step = np.linalg.solve(A, g)
                else:
                    step = cho_solve(cho_factor(A, lower=True), g)
            except (np.linalg.LinAlgError, ValueError):
                step = None
            if step is not None and not (np.all(np.isfinite(step)) and g @ step > 0):
                step = None

        accepted = False
        if root_newton and step is not None and nonpd_run == 0:
            # exact Newton on J'W(theta)r(theta) = 0, globalized on the decrement
            current = gnorm * gnorm
            t = 1.0
            for _ in range(opts.step_halvings + 1):
                trial = theta + t * step
                if merit(trial) < current:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                step = None
        if step is None:
            step = gn_step
        rel = float(np.max(np.abs(step) / (1.0 + np.abs(theta))))
        small = rel < opts.param_tol or gnorm < opts.grad_tol

        if not accepted:
            current = loss_at(theta, W)
            t = 1.0
            for _ in range(opts.step_halvings + 1):
                trial = theta + t * step
                if loss_at(trial, W) <= current:
                    accepted = True
                    break
                t *= 0.5
        if accepted:
            theta = trial
        elif not small:
            return _failed(method, a, theta, it, "line_search", spec, n, diag, W, gnorm)
        if small:
            return _finish(method, a, theta, it, spec, moments, static_W, weight_at, diag, gnorm)
    return _failed(method, a, theta, opts.max_iterations, "max_iterations", spec, n, diag, W, gnorm)


def _gamma_n_derivative(spec: ModelSpec, J, Sigma, u) -> np.ndarray:
    """Columns d(Gamma_N(Sigma) u)/d theta_k, shape (p*, q).

    Gamma_N(Sigma) u = vech(2 Sigma M Sigma) with M the symmetric matrix
    satisfying tr(M X) = u' vech(X).
    """
    p = spec.p
    r, c = pair_index(p)
    V = np.zeros((p, p))
    V[r, c] = u
    M = 0.5 * (V + V.T)
    dS = np.zeros((J.shape[1], p, p))
    dS[:, r, c] = J.T
    dS[:, c, r] = J.T
    A = dS @ (M @ Sigma)
    T = 2.0 * (A + A.transpose(0, 2, 1))
    return T[:, r, c].T


def _finish(method, a, theta, it, spec, moments, static_W, weight_at, diag, gnorm):
    Sigma = implied_covariance(spec, theta)
    try:
        if method.is_ml:
            W = build_weight(Method.GLS_M, None, gamma_normal(Sigma))
            loss = ml_loss(moments.S, Sigma)
        else:
            W = static_W if static_W is not None else weight_at(Sigma)
            loss = gls_loss(moments.s, vech(Sigma), W)
    except (SingularWeightError, SingularModelError) as exc:
        return _failed(method, a, theta, it, f"final_weight: {exc}", spec, moments.n, diag)
    return FitResult(
        method=method, a=a, theta=theta, loss=max(loss, 0.0), converged=True, iterations=it,
        heywood=_heywood(spec, theta), weight=W, gradient_norm=gnorm, reason="",
        sigma=Sigma, jac=jacobian(spec, theta), n=moments.n, diagnostics=diag,
    )
