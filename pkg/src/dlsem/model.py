"""Confirmatory factor model: parameter layout, Sigma(theta) and its Jacobian.

The model is x = Lambda xi + eps with cov(xi) = Phi (unit diagonal) and
cov(eps) = Psi diagonal, so Sigma(theta) = Lambda Phi Lambda' + Psi. Means
are not modelled.

Each free slot of Lambda, Phi (strict lower triangle) and Psi carries an
index into theta. Ordinarily every slot has its own index; slots that share
an index are tied to one value (the equal-loadings analysis model).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import InvalidDataError, SpecError
from .matrixkit import pair_index, vech

FIXED = -1


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Free/fixed pattern of a CFA model.

    Attributes
    ----------
    variables, factors : tuple of str
        Observed variable and factor names, in matrix order.
    loading_index : (p, m) int array
        Parameter index of each loading, ``FIXED`` (-1) for fixed entries.
    loading_value : (p, m) float array
        Values used for fixed loadings (zero for absent paths).
    phi_index, phi_value : (m, m) arrays
        Same for factor covariances; only the strict lower triangle is read,
        the diagonal is always 1.
    psi_index, psi_value : (p,) arrays
        Same for residual variances.
    """

    variables: tuple
    factors: tuple
    loading_index: np.ndarray
    loading_value: np.ndarray
    phi_index: np.ndarray
    phi_value: np.ndarray
    psi_index: np.ndarray
    psi_value: np.ndarray

    def __post_init__(self):
        p, m = len(self.variables), len(self.factors)
        for name, shape in [
            ("loading_index", (p, m)),
            ("loading_value", (p, m)),
            ("phi_index", (m, m)),
            ("phi_value", (m, m)),
            ("psi_index", (p,)),
            ("psi_value", (p,)),
        ]:
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise SpecError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, _frozen(arr))
        has_loading = (self.loading_index != FIXED) | (self.loading_value != 0)
        if not has_loading.any(axis=1).all():
            bad = [v for v, ok in zip(self.variables, has_loading.any(axis=1)) if not ok]
            raise SpecError(f"variables without any loading: {bad}")
        used = np.concatenate(
            [
                self.loading_index[self.loading_index != FIXED],
                self.phi_index[np.tril_indices(m, -1)][self.phi_index[np.tril_indices(m, -1)] != FIXED],
                self.psi_index[self.psi_index != FIXED],
            ]
        )
        q = int(used.max()) + 1 if used.size else 0
        if q and set(used.tolist()) != set(range(q)):
            raise SpecError("parameter indices must be contiguous from 0")
        object.__setattr__(self, "_q", q)

    @property
    def p(self) -> int:
        return len(self.variables)

    @property
    def m(self) -> int:
        return len(self.factors)

    @property
    def q(self) -> int:
        return self._q

    @property
    def df(self) -> int:
        return self.p * (self.p + 1) // 2 - self.q

    # -- construction -------------------------------------------------------

    @classmethod
    def from_pattern(cls, loading_free, variables=None, factors=None, phi_free=True, psi_free=True):
        """Build a spec with one parameter per free slot.

        ``loading_free`` is a boolean (p, m) grid; ``phi_free`` may be a bool
        (all off-diagonals free or all fixed at 0) or an (m, m) grid.
        """
        loading_free = np.asarray(loading_free, dtype=bool)
        p, m = loading_free.shape
        variables = tuple(variables or (f"x{j + 1}" for j in range(p)))
        factors = tuple(factors or (f"f{k + 1}" for k in range(m)))
        phi_free = np.broadcast_to(np.asarray(phi_free, dtype=bool), (m, m))
        psi_free = np.broadcast_to(np.asarray(psi_free, dtype=bool), (p,))

        counter = 0
        loading_index = np.full((p, m), FIXED)
        for k in range(m):
            for j in range(p):
                if loading_free[j, k]:
                    loading_index[j, k] = counter
                    counter += 1
        phi_index = np.full((m, m), FIXED)
        for k in range(m):
            for l in range(k + 1, m):
                if phi_free[l, k] or phi_free[k, l]:
                    phi_index[l, k] = phi_index[k, l] = counter
                    counter += 1
        psi_index = np.full(p, FIXED)
        for j in range(p):
            if psi_free[j]:
                psi_index[j] = counter
                counter += 1
        return cls(
            variables=variables,
            factors=factors,
            loading_index=loading_index,
            loading_value=np.zeros((p, m)),
            phi_index=phi_index,
            phi_value=np.eye(m),
            psi_index=psi_index,
            psi_value=np.zeros(p),
        )

    @classmethod
    def simple_structure(cls, p: int, m: int) -> "ModelSpec":
        """Each factor measured by its own block of p/m consecutive variables."""
        if p % m:
            raise SpecError(f"p={p} is not divisible by m={m}")
        per = p // m
        pattern = np.zeros((p, m), dtype=bool)
        for k in range(m):
            pattern[k * per:(k + 1) * per, k] = True
        return cls.from_pattern(pattern)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        """Parse the JSON model format.

        Keys: ``variables`` (ordered names), ``factors`` (name -> indicator
        list), optional ``cross_loadings`` (list of [variable, factor]) and
        optional ``fixed`` (parameter name -> value, see :meth:`param_names`).
        """
        try:
            variables = list(d["variables"])
            factor_map = dict(d["factors"])
        except (KeyError, TypeError) as exc:
            raise SpecError(f"model spec needs 'variables' and 'factors': {exc}") from None
        factors = list(factor_map)
        vpos = {v: j for j, v in enumerate(variables)}
        fpos = {f: k for k, f in enumerate(factors)}
        pattern = np.zeros((len(variables), len(factors)), dtype=bool)
        for f, inds in factor_map.items():
            for v in inds:
                if v not in vpos:
                    raise SpecError(f"factor '{f}' lists unknown variable '{v}'")
                pattern[vpos[v], fpos[f]] = True
        for pair in d.get("cross_loadings", []) or []:
            v, f = pair
            if v not in vpos or f not in fpos:
                raise SpecError(f"cross_loadings entry {pair} names unknown variable/factor")
            pattern[vpos[v], fpos[f]] = True
        spec = cls.from_pattern(pattern, variables, factors)
        fixed = d.get("fixed") or {}
        return spec.with_fixed(fixed) if fixed else spec

    @classmethod
    def from_json(cls, path) -> "ModelSpec":
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SpecError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        factors = {
            f: [v for j, v in enumerate(self.variables) if self.loading_index[j, k] != FIXED or self.loading_value[j, k] != 0]
            for k, f in enumerate(self.factors)
        }
        return {"variables": list(self.variables), "factors": factors}

    # -- derived specs ------------------------------------------------------

    def _reindexed(self, loading_index, loading_value, phi_index, phi_value, psi_index, psi_value):
        """Renumber surviving parameter indices in first-appearance order."""
        order = {}

        def renum(idx):
            out = np.array(idx, copy=True, order="C")
            flat = out.reshape(-1)
            for i, v in enumerate(flat):
                if v != FIXED:
                    if v not in order:
                        order[v] = len(order)
                    flat[i] = order[v]
            return out

        # appearance order: loadings column-major, phi lower column-major, psi
        li = renum(np.asarray(loading_index).T).T
        m = len(self.factors)
        pi = np.array(phi_index, copy=True)
        for k in range(m):
            for l in range(k + 1, m):
                v = pi[l, k]
                if v != FIXED:
                    if v not in order:
                        order[v] = len(order)
                    pi[l, k] = pi[k, l] = order[v]
        si = renum(psi_index)
        return ModelSpec(self.variables, self.factors, li, loading_value, pi, phi_value, si, psi_value)

    def with_fixed(self, fixed: dict) -> "ModelSpec":
        """Fix named parameters at given values."""
        names = self.slot_names()
        li, lv = np.array(self.loading_index), np.array(self.loading_value, dtype=float)
        pi, pv = np.array(self.phi_index), np.array(self.phi_value, dtype=float)
        si, sv = np.array(self.psi_index), np.array(self.psi_value, dtype=float)
        for name, value in fixed.items():
            if name not in names:
                raise SpecError(f"cannot fix unknown parameter '{name}'")
            kind, a, b = names[name]
            if kind == "loading":
                li[a, b], lv[a, b] = FIXED, value
            elif kind == "phi":
                pi[a, b] = pi[b, a] = FIXED
                pv[a, b] = pv[b, a] = value
            else:
                si[a], sv[a] = FIXED, value
        return self._reindexed(li, lv, pi, pv, si, sv)

    def with_zero_factor_correlations(self) -> "ModelSpec":
        m = self.m
        pi = np.full((m, m), FIXED)
        pv = np.eye(m)
        return self._reindexed(self.loading_index, self.loading_value, pi, pv, self.psi_index, self.psi_value)

    def with_equal_loadings(self) -> "ModelSpec":
        """Tie every free loading to one shared parameter."""
        li = np.array(self.loading_index)
        free = li != FIXED
        if not free.any():
            return self
        shared = int(li[free].min())
        li[free] = shared
        return self._reindexed(li, self.loading_value, self.phi_index, self.phi_value, self.psi_index, self.psi_value)

    # -- naming -------------------------------------------------------------

    def slot_names(self) -> dict:
        """Map of slot name -> (kind, row, col) for every potentially free slot."""
        out = {}
        for k, f in enumerate(self.factors):
            for j, v in enumerate(self.variables):
                if self.loading_index[j, k] != FIXED or self.loading_value[j, k] != 0:
                    out[f"{f}=~{v}"] = ("loading", j, k)
        for k in range(self.m):
            for l in range(k + 1, self.m):
                out[f"{self.factors[k]}~~{self.factors[l]}"] = ("phi", l, k)
        for j, v in enumerate(self.variables):
            out[f"{v}~~{v}"] = ("psi", j, j)
        return out

    def param_names(self) -> list:
        """Names of theta entries; a tied parameter is named after its first slot."""
        names = [None] * self.q
        for name, (kind, a, b) in self.slot_names().items():
            if kind == "loading":
                idx = self.loading_index[a, b]
            elif kind == "phi":
                idx = self.phi_index[a, b]
            else:
                idx = self.psi_index[a]
            if idx != FIXED and names[idx] is None:
                names[idx] = name
        return names

    def param_kinds(self) -> np.ndarray:
        """'loading', 'phi' or 'psi' for each theta entry."""
        kinds = np.empty(self.q, dtype=object)
        kinds[self.loading_index[self.loading_index != FIXED]] = "loading"
        low = np.tril_indices(self.m, -1)
        pidx = self.phi_index[low]
        kinds[pidx[pidx != FIXED]] = "phi"
        kinds[self.psi_index[self.psi_index != FIXED]] = "psi"
        return kinds

    # -- theta <-> matrices ---------------------------------------------------

    @property
    def layout(self) -> "_Layout":
        lay = self.__dict__.get("_layout")
        if lay is None:
            lay = _Layout(self)
            object.__setattr__(self, "_layout", lay)
        return lay

    def matrices(self, theta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (Lambda, Phi, psi diagonal) for a parameter vector."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.q,):
            raise SpecError(f"theta has length {theta.size}, expected {self.q}")
        lay = self.layout
        L = self.loading_value.copy()
        L.flat[lay.l_flat] = theta[lay.l_idx]
        Phi = self.phi_value.copy()
        Phi.flat[lay.f_flat] = theta[lay.f_idx]
        Phi.flat[lay.f_flat_t] = theta[lay.f_idx]
        np.fill_diagonal(Phi, 1.0)
        psi = self.psi_value.copy()
        psi[lay.s_pos] = theta[lay.s_idx]
        return L, Phi, psi

    def pack(self, Lambda, Phi, psi) -> np.ndarray:
        """Inverse of :meth:`matrices`; tied slots are averaged."""
        Lambda, Phi, psi = np.asarray(Lambda, float), np.asarray(Phi, float), np.asarray(psi, float)
        total = np.zeros(self.q)
        count = np.zeros(self.q)
        mask = self.loading_index != FIXED
        np.add.at(total, self.loading_index[mask], Lambda[mask])
        np.add.at(count, self.loading_index[mask], 1)
        low = np.tril_indices(self.m, -1)
        pidx = self.phi_index[low]
        keep = pidx != FIXED
        np.add.at(total, pidx[keep], Phi[low][keep])
        np.add.at(count, pidx[keep], 1)
        mask = self.psi_index != FIXED
        np.add.at(total, self.psi_index[mask], psi[mask])
        np.add.at(count, self.psi_index[mask], 1)
        return total / count


class _Layout:
    """Index tables for fast theta -> matrix and Jacobian evaluation."""

    def __init__(self, spec: ModelSpec):
        p, m, q = spec.p, spec.m, spec.q
        r, c = pair_index(p)
        js, ks = np.nonzero(spec.loading_index.T != FIXED)
        ks, js = js, ks  # column-major order over Lambda
        self.l_rows, self.l_cols = js, ks
        self.l_flat = js * m + ks
        self.l_idx = spec.loading_index[js, ks]
        low_r, low_c = np.tril_indices(m, -1)
        keep = spec.phi_index[low_r, low_c] != FIXED
        self.f_rows, self.f_cols = low_r[keep], low_c[keep]
        self.f_flat = self.f_rows * m + self.f_cols
        self.f_flat_t = self.f_cols * m + self.f_rows
        self.f_idx = spec.phi_index[self.f_rows, self.f_cols]
        self.s_pos = np.nonzero(spec.psi_index != FIXED)[0]
        self.s_idx = spec.psi_index[self.s_pos]
        self.r, self.c = r, c
        self.diag = np.arange(p) * (p + 1)
        # loading slot j contributes (r == j) a[c] + a[r] (c == j)
        self.l_rmask = (r[:, None] == js[None, :]).astype(float)
        self.l_cmask = (c[:, None] == js[None, :]).astype(float)
        self.l_assign = np.zeros((js.size, q))
        self.l_assign[np.arange(js.size), self.l_idx] = 1.0
        self.f_assign = np.zeros((self.f_idx.size, q))
        self.f_assign[np.arange(self.f_idx.size), self.f_idx] = 1.0
        self.psi_block = np.zeros((r.size, q))
        for j, idx in zip(self.s_pos, self.s_idx):
            self.psi_block[(r == j) & (c == j), idx] += 1.0


def implied_covariance(spec: ModelSpec, theta) -> np.ndarray:
    """Sigma(theta) = Lambda Phi Lambda' + Psi."""
    L, Phi, psi = spec.matrices(theta)
    Sigma = L @ Phi @ L.T
    Sigma.flat[spec.layout.diag] += psi
    return 0.5 * (Sigma + Sigma.T)


def implied_covariance_vech(spec: ModelSpec, theta) -> np.ndarray:
    return vech(implied_covariance(spec, theta))


def jacobian(spec: ModelSpec, theta) -> np.ndarray:
    """Analytic d sigma(theta) / d theta', shape (p*, q).

    d Sigma / d lambda_jk = e_j a' + a e_j' with a = (Lambda Phi)[:, k];
    d Sigma / d phi_kl = L_k L_l' + L_l L_k'; d Sigma / d psi_jj = e_j e_j'.
    Tied slots contribute to the same column.
    """
    L, Phi, _ = spec.matrices(theta)
    lay = spec.layout
    r, c = lay.r, lay.c
    A = (L @ Phi)[:, lay.l_cols]
    J = lay.psi_block.copy()
    J += (lay.l_rmask * A[c] + A[r] * lay.l_cmask) @ lay.l_assign
    if lay.f_idx.size:
        k, l = lay.f_cols, lay.f_rows
        J += (L[r][:, k] * L[c][:, l] + L[r][:, l] * L[c][:, k]) @ lay.f_assign
    return J


def curvature(spec: ModelSpec, theta, v) -> np.ndarray:
    """sum_i v_i d^2 sigma_i / d theta d theta', shape (q, q).

    Equals the Hessian of tr(M Sigma(theta)) where M is the symmetric matrix
    with tr(M Sigma) = v' vech(Sigma). Only loading-loading and
    loading-phi blocks are nonzero.
    """
    L, Phi, _ = spec.matrices(theta)
    lay = spec.layout
    V = np.zeros((spec.p, spec.p))
    V[lay.r, lay.c] = v
    M = 0.5 * (V + V.T)
    js, ks = lay.l_rows, lay.l_cols
    ll = 2.0 * M[np.ix_(js, js)] * Phi[np.ix_(ks, ks)]
    C = lay.l_assign.T @ ll @ lay.l_assign
    if lay.f_idx.size:
        ML = M @ L
        k, l = lay.f_cols, lay.f_rows
        lf = 2.0 * (ML[js][:, k] * (ks[:, None] == l[None, :]) + ML[js][:, l] * (ks[:, None] == k[None, :]))
        block = lay.l_assign.T @ lf @ lay.f_assign
        C += block + block.T
    return C


def start_values(spec: ModelSpec, S) -> np.ndarray:
    """Deterministic starts: loadings 0.7*sd, factor covariances 0.3, residuals 0.5*var."""
    d = np.diag(np.asarray(S, dtype=float))
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise InvalidDataError("sample variances must be positive to build start values")
    L = np.tile(0.7 * np.sqrt(d)[:, None], (1, spec.m))
    Phi = np.full((spec.m, spec.m), 0.3)
    return spec.pack(L, Phi, 0.5 * d)


def bundled_spec_path() -> Path:
    return Path(__file__).parent / "data" / "holzinger_3factor.json"


def holzinger_spec() -> ModelSpec:
    """Three-factor Grant-White model with x9 loading on visual and speed."""
    return ModelSpec.from_json(bundled_spec_path())
