"""Monte Carlo studies, evaluation metrics and bootstrap selection of a.

Replication k of cell c draws its data from the stream (seed, c, k), so a
study's results do not depend on how replications are spread over worker
processes. Aggregation always runs in replication order.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._version import __version__
from .datagen import Condition, PopulationModel, bollen_stine_transform, bootstrap_sample, build_population, generate, make_rng
from .estimation import FitOptions, Method, fit
from .exceptions import CannotTuneError, DlsemError, SpecError, UndefinedMetricError
from .fitstats import fit_statistics
from .inference import standard_errors
from .model import ModelSpec
from .moments import MomentSet

THREADS_ENV = "DLSEM_THREADS"
DESK_GRID = tuple(round(0.1 * i, 10) for i in range(11))
FULL_GRID = tuple(round(0.01 * i, 10) for i in range(101))
MISSPECIFICATIONS = ("none", "zero_factor_correlations", "equal_loadings")
STATISTICS = ("T", "T_SB", "T_MVA", "T_JY_rank", "T_JY_df")


# -- metrics -----------------------------------------------------------------


def rmse(estimates, theta_true) -> float:
    """Per-parameter root mean squared error, averaged over parameters.

    ``estimates`` is (replications, q) and holds converged replications only.
    """
    est = np.atleast_2d(np.asarray(estimates, float))
    if est.shape[0] == 0:
        raise UndefinedMetricError("no converged replications")
    err = est - np.asarray(theta_true, float)
    return float(np.mean(np.sqrt(np.mean(err * err, axis=0))))


def empirical_se(estimates) -> np.ndarray:
    """Standard deviation (divisor count - 1) of each parameter across replications."""
    est = np.atleast_2d(np.asarray(estimates, float))
    if est.shape[0] < 2:
        raise UndefinedMetricError("empirical SE needs at least two converged replications")
    return est.std(axis=0, ddof=1)


def relative_se_bias(se_estimates, emp_se, subset=None) -> float:
    """mean_i |mean_j(SE_ij) - SE_i| / SE_i over the parameters in ``subset``."""
    se = np.atleast_2d(np.asarray(se_estimates, float))
    emp = np.asarray(emp_se, float)
    if subset is not None:
        se, emp = se[:, subset], emp[subset]
    if se.shape[0] == 0 or emp.size == 0:
        raise UndefinedMetricError("no standard errors to summarize")
    if np.any(emp <= 0):
        raise UndefinedMetricError("empirical SE is zero")
    return float(np.mean(np.abs(se.mean(axis=0) - emp) / emp))


def type_i_error(p_values, alpha: float = 0.05) -> float:
    """Fraction of (finite) p-values below alpha; NaN if there are none."""
    p = np.asarray(p_values, float)
    p = p[np.isfinite(p)]
    if p.size == 0:
        return float("nan")
    return float(np.mean(p < alpha))


def select_a(grid, curve) -> tuple[float, float]:
    """(a_s, min value) of a curve over the grid; ties go to the larger a, NaNs are skipped."""
    grid = np.asarray(grid, float)
    curve = np.asarray(curve, float)
    ok = np.isfinite(curve)
    if not ok.any():
        raise UndefinedMetricError("no grid point has a defined RMSE")
    best = np.min(curve[ok])
    idx = np.flatnonzero(ok & (curve == best))
    k = idx[np.argmax(grid[idx])]
    return float(grid[k]), float(best)


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class MethodGrid:
    method: Method
    grid: tuple

    def to_dict(self) -> dict:
        return {"method": self.method.cli_name, "grid": list(self.grid) if self.method.tuned else None}


_CONFIG_KEYS = {
    "p", "m", "n_list", "conditions", "methods", "replications", "seed", "misspecification",
    "shared_radial", "alpha", "full_grid", "population_seed", "options",
}


@dataclass(frozen=True)
class StudyConfig:
    """Definition of a Monte Carlo study.

    Tuned methods without an explicit grid get :data:`DESK_GRID`, or
    :data:`FULL_GRID` when ``full_grid`` is set.
    """

    p: int = 5
    m: int = 1
    n_list: tuple = (300,)
    conditions: tuple = (Condition.NORMAL,)
    methods: tuple = (MethodGrid(Method.DLS_M, DESK_GRID), MethodGrid(Method.ML_EM, (1.0,)))
    replications: int = 200
    seed: int = 1
    misspecification: str = "none"
    shared_radial: bool = True
    alpha: float = 0.05
    full_grid: bool = False
    population_seed: int | None = None
    options: FitOptions = field(default_factory=FitOptions)

    @classmethod
    def from_dict(cls, d: dict, full_grid: bool | None = None) -> "StudyConfig":
        """Validate a parsed JSON config; errors name the offending field."""
        if not isinstance(d, dict):
            raise SpecError("config: expected a JSON object")
        unknown = set(d) - _CONFIG_KEYS
        if unknown:
            raise SpecError(f"config: unknown field(s) {sorted(unknown)}")
        kw: dict = {}

        def integer(name, lo):
            v = d[name]
            if isinstance(v, bool) or not isinstance(v, int) or v < lo:
                raise SpecError(f"config.{name}: expected an integer >= {lo}, got {v!r}")
            return v

        for name, lo in (("p", 1), ("m", 1), ("replications", 1), ("seed", 0), ("population_seed", 0)):
            if name in d and d[name] is not None:
                kw[name] = integer(name, lo)
        if "n_list" in d:
            ns = d["n_list"]
            if isinstance(ns, int):
                ns = [ns]
            if not isinstance(ns, list) or not ns or any(isinstance(x, bool) or not isinstance(x, int) or x < 2 for x in ns):
                raise SpecError(f"config.n_list: expected a list of integers >= 2, got {d['n_list']!r}")
            kw["n_list"] = tuple(ns)
        if "conditions" in d:
            cs = d["conditions"]
            if isinstance(cs, str):
                cs = [cs]
            try:
                kw["conditions"] = tuple(Condition.parse(c) for c in cs)
            except ValueError as exc:
                raise SpecError(f"config.conditions: {exc}") from None
        for name in ("shared_radial", "full_grid"):
            if name in d:
                if not isinstance(d[name], bool):
                    raise SpecError(f"config.{name}: expected true or false")
                kw[name] = d[name]
        if full_grid is not None:
            kw["full_grid"] = full_grid
        if "alpha" in d:
            a = d["alpha"]
            if not isinstance(a, (int, float)) or not 0 < a < 1:
                raise SpecError(f"config.alpha: expected a number in (0, 1), got {a!r}")
            kw["alpha"] = float(a)
        if "misspecification" in d:
            ms = str(d["misspecification"]).replace("-", "_")
            if ms not in MISSPECIFICATIONS:
                raise SpecError(f"config.misspecification: expected one of {MISSPECIFICATIONS}, got {d['misspecification']!r}")
            kw["misspecification"] = ms
        if "options" in d:
            try:
                kw["options"] = FitOptions(**d["options"])
            except TypeError as exc:
                raise SpecError(f"config.options: {exc}") from None
        default_grid = FULL_GRID if kw.get("full_grid", False) else DESK_GRID
        if "methods" in d:
            kw["methods"] = tuple(_parse_method_entry(e, default_grid) for e in d["methods"])
            if not kw["methods"]:
                raise SpecError("config.methods: at least one method is required")
        else:
            kw["methods"] = (MethodGrid(Method.DLS_M, default_grid), MethodGrid(Method.ML_EM, (1.0,)))
        cfg = cls(**kw)
        if cfg.p % cfg.m:
            raise SpecError(f"config.p: p={cfg.p} is not divisible by m={cfg.m}")
        return cfg

    @classmethod
    def from_json(cls, path, full_grid: bool | None = None) -> "StudyConfig":
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SpecError(f"config: invalid JSON ({exc})") from None
        return cls.from_dict(d, full_grid=full_grid)

    def to_dict(self) -> dict:
        return {
            "p": self.p, "m": self.m, "n_list": list(self.n_list),
            "conditions": [c.cli_name for c in self.conditions],
            "methods": [mg.to_dict() for mg in self.methods],
            "replications": self.replications, "seed": self.seed,
            "misspecification": self.misspecification, "shared_radial": self.shared_radial,
            "alpha": self.alpha, "full_grid": self.full_grid,
            "population_seed": self.population_seed,
            "options": dict(vars(self.options)),
        }


def _parse_method_entry(entry, default_grid) -> MethodGrid:
    grid = None
    if isinstance(entry, dict):
        if "method" not in entry:
            raise SpecError("config.methods: each object needs a 'method' field")
        name, grid = entry["method"], entry.get("grid")
    else:
        name = entry
    try:
        method = Method.parse(name)
    except ValueError as exc:
        raise SpecError(f"config.methods: {exc}") from None
    if not method.tuned:
        return MethodGrid(method, (1.0,))
    if grid is None:
        grid = default_grid
    try:
        grid = tuple(float(a) for a in grid)
    except (TypeError, ValueError):
        raise SpecError(f"config.methods.grid: expected a list of numbers for {method.cli_name}") from None
    if not grid or any(not 0.0 <= a <= 1.0 for a in grid):
        raise SpecError(f"config.methods.grid: values for {method.cli_name} must lie in [0, 1]")
    return MethodGrid(method, grid)


def analysis_spec(pop: PopulationModel, misspecification: str) -> tuple[ModelSpec, np.ndarray]:
    """Spec fitted to the data and the pseudo-true theta it should recover.

    Tied loadings target the mean of the true loadings; dropped factor
    correlations simply leave theta.
    """
    if misspecification == "none":
        return pop.spec, pop.theta_true
    if misspecification == "zero_factor_correlations":
        spec = pop.spec.with_zero_factor_correlations()
    elif misspecification == "equal_loadings":
        spec = pop.spec.with_equal_loadings()
    else:
        raise SpecError(f"unknown misspecification '{misspecification}'")
    return spec, spec.pack(pop.Lambda, pop.Phi, np.diag(pop.Psi))


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(workers))


def _map(func, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, tasks, chunksize=chunk))


# -- study -------------------------------------------------------------------


def _fit_record(ms, spec, method, a, options, q):
    """theta, se, p-values (one per STATISTICS entry), converged flag for one fit."""
    theta = np.full(q, np.nan)
    se = np.full(q, np.nan)
    pv = np.full(len(STATISTICS), np.nan)
    try:
        res = fit(ms, spec, method, a, options)
    except DlsemError:
        return theta, se, pv, False
    if not res.converged:
        return theta, se, pv, False
    theta = res.theta
    try:
        se = standard_errors(res, ms).se
    except (DlsemError, ValueError):
        pass
    try:
        st = fit_statistics(res, ms)
        pv = np.array([st.p_t, st.p_sb, st.p_mva, st.p_jy, st.p_jy_df])
    except (DlsemError, ValueError):
        pass
    return theta, se, pv, True


def _replication(task):
    pop, spec, cond, n, stream, methods, options, shared_radial = task
    X = generate(pop, n, cond, make_rng(*stream), shared_radial=shared_radial)
    ms = MomentSet.from_data(X)
    out = []
    for mg in methods:
        recs = [_fit_record(ms, spec, mg.method, a, options, spec.q) for a in mg.grid]
        out.append((
            np.array([r[0] for r in recs]), np.array([r[1] for r in recs]),
            np.array([r[2] for r in recs]), np.array([r[3] for r in recs]),
        ))
    return out


@dataclass
class StudyReport:
    config: dict
    theta_true: list
    param_names: list
    cells: list
    params: list
    selected: list
    version: str = __version__

    def to_dict(self) -> dict:
        return _clean({
            "version": self.version, "config": self.config, "theta_true": self.theta_true,
            "param_names": self.param_names, "cells": self.cells, "selected_a": self.selected,
            "parameters": self.params,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, out_dir) -> list[Path]:
        """report.json, metrics.csv, parameters.csv, selected_a.csv and plot-data CSVs."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json"]
        paths[0].write_text(self.to_json() + "\n")
        metric_names = [k for k in self.cells[0] if k not in ("condition", "n", "method", "a")] if self.cells else []
        rows = [
            {"condition": c["condition"], "n": c["n"], "method": c["method"], "a": c["a"], "metric": k, "value": c[k]}
            for c in self.cells for k in metric_names
        ]
        paths.append(_write_csv(out / "metrics.csv", ["condition", "n", "method", "a", "metric", "value"], rows))
        paths.append(_write_csv(
            out / "parameters.csv",
            ["condition", "n", "method", "a", "parameter", "true", "mean_estimate", "empirical_se", "mean_se"],
            self.params,
        ))
        paths.append(_write_csv(out / "selected_a.csv", ["condition", "n", "method", "a_s", "rmse"], self.selected))
        by_a = [
            {"condition": c["condition"], "n": c["n"], "series": c["method"], "x": c["a"], "rmse": c["rmse"],
             "rel_se_bias_loadings_phi": c["rel_se_bias_loadings_phi"], "rel_se_bias_all": c["rel_se_bias_all"],
             "convergence_rate": c["convergence_rate"], "type1_T_JY_rank": c["type1_T_JY_rank"]}
            for c in self.cells if c["a"] is not None
        ]
        paths.append(_write_csv(out / "plot_by_a.csv", list(by_a[0]) if by_a else ["x"], by_a))
        best = {(s["condition"], s["n"], s["method"]): s["a_s"] for s in self.selected}
        by_n = []
        for c in self.cells:
            key = (c["condition"], c["n"], c["method"])
            if c["a"] is None or best.get(key) == c["a"]:
                row = {"condition": c["condition"], "series": c["method"], "x": c["n"], "a": c["a"]}
                row.update({k: c[k] for k in ("rmse", "rel_se_bias_loadings_phi", "rel_se_bias_all", "convergence_rate")})
                row.update({f"type1_{s}": c[f"type1_{s}"] for s in STATISTICS})
                by_n.append(row)
        paths.append(_write_csv(out / "plot_by_n.csv", list(by_n[0]) if by_n else ["x"], by_n))
        return paths


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in _clean(r).items()})
    return path


def _safe(f, *args) -> float:
    try:
        return f(*args)
    except UndefinedMetricError:
        return float("nan")


def _summarize(theta, se, pv, ok, truth, focus, alpha):
    est, ses, pvs = theta[ok], se[ok], pv[ok]
    n_ok = int(ok.sum())
    cell = {"replications": int(ok.size), "converged": n_ok, "convergence_rate": n_ok / ok.size}
    cell["rmse"] = _safe(rmse, est, truth)
    emp = _safe(empirical_se, est) if n_ok >= 2 else np.full(truth.size, np.nan)
    se_ok = ses[np.all(np.isfinite(ses), axis=1)]
    if np.all(np.isfinite(emp)) and se_ok.shape[0]:
        cell["rel_se_bias_loadings_phi"] = _safe(relative_se_bias, se_ok, emp, focus)
        cell["rel_se_bias_all"] = _safe(relative_se_bias, se_ok, emp)
    else:
        cell["rel_se_bias_loadings_phi"] = cell["rel_se_bias_all"] = float("nan")
    for j, name in enumerate(STATISTICS):
        cell[f"type1_{name}"] = type_i_error(pvs[:, j], alpha) if n_ok else float("nan")
    mean_est = est.mean(axis=0) if n_ok else np.full(truth.size, np.nan)
    mean_se = se_ok.mean(axis=0) if se_ok.shape[0] else np.full(truth.size, np.nan)
    return cell, mean_est, np.broadcast_to(emp, truth.shape), mean_se


def run_study(config: StudyConfig, workers: int | None = None) -> StudyReport:
    """Generate, fit and summarize every (condition, N) cell of a study."""
    workers = resolve_workers(workers)
    pop_seed = config.seed if config.population_seed is None else config.population_seed
    pop = build_population(config.p, config.m, pop_seed)
    spec, truth = analysis_spec(pop, config.misspecification)
    focus = np.isin(spec.param_kinds(), ["loading", "phi"])
    names = spec.param_names()
    cells, params, selected = [], [], []
    cell_id = 0
    for cond in config.conditions:
        for n in config.n_list:
            cell_id += 1
            tasks = [
                (pop, spec, cond, n, (config.seed, cell_id, k), config.methods, config.options, config.shared_radial)
                for k in range(config.replications)
            ]
            results = _map(_replication, tasks, workers)
            for mi, mg in enumerate(config.methods):
                theta = np.stack([r[mi][0] for r in results], axis=1)
                se = np.stack([r[mi][1] for r in results], axis=1)
                pv = np.stack([r[mi][2] for r in results], axis=1)
                ok = np.stack([r[mi][3] for r in results], axis=1)
                curve = []
                for gi, a in enumerate(mg.grid):
                    cell, mean_est, emp, mean_se = _summarize(theta[gi], se[gi], pv[gi], ok[gi], truth, focus, config.alpha)
                    a_out = a if mg.method.tuned else None
                    head = {"condition": cond.cli_name, "n": n, "method": mg.method.cli_name, "a": a_out}
                    cells.append({**head, **cell})
                    curve.append(cell["rmse"])
                    for i, name in enumerate(names):
                        params.append({**head, "parameter": name, "true": truth[i], "mean_estimate": mean_est[i],
                                       "empirical_se": emp[i], "mean_se": mean_se[i]})
                if mg.method.tuned:
                    try:
                        a_s, best = select_a(mg.grid, curve)
                    except UndefinedMetricError:
                        a_s, best = float("nan"), float("nan")
                    selected.append({"condition": cond.cli_name, "n": n, "method": mg.method.cli_name, "a_s": a_s, "rmse": best})
    return StudyReport(
        config=config.to_dict(), theta_true=list(map(float, truth)), param_names=names,
        cells=cells, params=params, selected=selected,
    )


# -- bootstrap tuning --------------------------------------------------------


@dataclass
class TuneResult:
    """Bootstrap RMSE curve over a grid of a values.

    ``sq_errors`` holds (B, grid, q) squared errors against theta_ML, NaN
    where the fit did not converge, so curves for the first b < B samples
    can be recomputed with :meth:`prefix`.
    """

    method: Method
    grid: np.ndarray
    theta_ml: np.ndarray
    sq_errors: np.ndarray
    seed: int
    warnings: list = field(default_factory=list)

    @property
    def B(self) -> int:
        return self.sq_errors.shape[0]

    @property
    def convergence(self) -> np.ndarray:
        return np.mean(np.all(np.isfinite(self.sq_errors), axis=2), axis=0)

    @property
    def curve(self) -> np.ndarray:
        """Empirical RMSE per grid point over that point's converged samples."""
        ok = np.all(np.isfinite(self.sq_errors), axis=2)
        out = np.full(self.grid.size, np.nan)
        for g in range(self.grid.size):
            if ok[:, g].any():
                out[g] = np.mean(np.sqrt(np.mean(self.sq_errors[ok[:, g], g], axis=0)))
        return out

    @property
    def a_s(self) -> float:
        return select_a(self.grid, self.curve)[0]

    @property
    def min_rmse(self) -> float:
        return select_a(self.grid, self.curve)[1]

    def extended(self, other: "TuneResult") -> "TuneResult":
        """Append the samples of a run started at ``first=self.B`` with the same seed."""
        if other.seed != self.seed or other.method is not self.method or not np.array_equal(other.grid, self.grid):
            raise ValueError("runs differ in seed, method or grid")
        return TuneResult(self.method, self.grid, self.theta_ml, np.concatenate([self.sq_errors, other.sq_errors]),
                          self.seed, self.warnings + other.warnings)

    def prefix(self, b: int) -> "TuneResult":
        if not 1 <= b <= self.B:
            raise ValueError(f"prefix size {b} outside 1..{self.B}")
        return TuneResult(self.method, self.grid, self.theta_ml, self.sq_errors[:b], self.seed, list(self.warnings))

    def to_dict(self) -> dict:
        return _clean({
            "method": self.method.cli_name, "B": self.B, "seed": self.seed, "a_s": self.a_s,
            "min_rmse": self.min_rmse, "theta_ml": self.theta_ml, "warnings": self.warnings,
            "curve": [{"a": a, "rmse": r, "convergence_rate": c} for a, r, c in zip(self.grid, self.curve, self.convergence)],
            "version": __version__,
        })


def _tune_chunk(task):
    X0, spec, method, grid, theta_ml, seed, indices, options = task
    order = np.argsort(-np.asarray(grid), kind="stable")
    out = np.full((len(indices), len(grid), spec.q), np.nan)
    for row, k in enumerate(indices):
        ms = MomentSet.from_data(bootstrap_sample(X0, make_rng(seed, k)))
        start = theta_ml
        for g in order:
            res = fit(ms, spec, method, grid[g], options, start=start)
            if not res.converged and start is not theta_ml:
                res = fit(ms, spec, method, grid[g], options, start=theta_ml)
            if res.converged:
                out[row, g] = (res.theta - theta_ml) ** 2
                start = res.theta
    return out


def tune_a(X, spec: ModelSpec, method, grid=FULL_GRID, B: int = 1000, seed: int = 0,
           workers: int | None = None, options: FitOptions | None = None, first: int = 0) -> TuneResult:
    """Select a by bootstrap RMSE around the ML fit.

    The data are Bollen-Stine transformed to Sigma(theta_ML), resampled B
    times and fitted at every a in ``grid``; theta_ML plays the role of the
    true value. Within one bootstrap sample the grid is swept from the
    largest a down, each fit starting from the previous solution.
    Bootstrap sample k is drawn from stream (seed, k) for k = first, ...,
    first + B - 1, so runs can be split and joined with :meth:`TuneResult.extended`.

    Raises
    ------
    CannotTuneError
        If the ML fit on ``X`` does not converge.
    """
    method = Method.parse(method)
    if not method.tuned:
        raise ValueError(f"{method.cli_name} has no tuning parameter")
    grid = np.asarray(grid, float)
    if grid.size == 0 or np.any((grid < 0) | (grid > 1)):
        raise ValueError("grid values must lie in [0, 1]")
    if B < 1:
        raise ValueError("B must be at least 1")
    options = options or FitOptions()
    ms = MomentSet.from_data(X)
    ml = fit(ms, spec, Method.ML_EM, options=options)
    if not ml.converged:
        raise CannotTuneError(f"ML fit did not converge ({ml.reason})")
    X0 = bollen_stine_transform(X, ml.sigma)
    workers = resolve_workers(workers)
    n_chunks = min(B, max(1, 8 * workers)) if workers > 1 else 1
    chunks = [c.tolist() for c in np.array_split(np.arange(first, first + B), n_chunks) if c.size]
    tasks = [(X0, spec, method, grid, ml.theta, seed, c, options) for c in chunks]
    sq = np.concatenate(_map(_tune_chunk, tasks, workers), axis=0)
    notes = []
    if B < 2:
        notes.append(f"B={B}: the RMSE curve rests on a single bootstrap sample and is degenerate")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    return TuneResult(method, grid, ml.theta, sq, seed, notes)
