"""Command-line front end: ``dlsem fit | tune | simulate | describe``.

Exit codes: 0 success, 2 invalid input, 3 ran but did not converge,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings

import numpy as np

from ._version import __version__
from .dataio import holzinger_data, holzinger_path, read_csv, select_columns
from .estimation import FitOptions, Method, fit
from .exceptions import CannotTuneError, DlsemError, InvalidDataError, SpecError
from .fitstats import fit_statistics
from .harness import FULL_GRID, THREADS_ENV, StudyConfig, run_study, tune_a
from .inference import standard_errors
from .model import ModelSpec, bundled_spec_path
from .moments import MomentSet, multivariate_kurtosis, multivariate_skewness, sample_cov

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_NUMERIC = 0, 2, 3, 4

SE_CHOICES = {
    "auto": ("auto", None),
    "standard": ("standard", None),
    "sandwich": ("sandwich", None),
    "expected-model": ("standard", "expected_M"),
    "observed-model": ("standard", "observed_M"),
    "sample": ("standard", "S"),
}


def _load(data_path, spec_path):
    """(X, spec, data label, spec label); defaults to the bundled example."""
    spec = ModelSpec.from_json(spec_path) if spec_path else ModelSpec.from_json(bundled_spec_path())
    if data_path:
        names, X = read_csv(data_path)
    else:
        names, X = holzinger_data()
    X = select_columns(names, X, spec.variables)
    return X, spec, str(data_path or holzinger_path()), str(spec_path or bundled_spec_path())


def _options(args) -> FitOptions:
    return FitOptions(
        max_iterations=args.max_iterations, param_tol=args.param_tol, grad_tol=args.grad_tol,
        step_halvings=args.step_halvings, newton=not args.no_newton,
    )


def _a_value(text) -> float:
    try:
        a = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{text}' is not a number") from None
    if not 0.0 <= a <= 1.0:
        raise argparse.ArgumentTypeError(f"a={a} must lie in [0, 1]")
    return a


def _grid(text) -> tuple:
    """'start:stop:step' or a comma list."""
    try:
        if ":" in text:
            lo, hi, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError
            k = int(round((hi - lo) / step))
            vals = [round(lo + i * step, 10) for i in range(k + 1)]
        else:
            vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse grid '{text}' (use 0:1:0.01 or 0,0.5,1)") from None
    if not vals or any(not 0.0 <= v <= 1.0 for v in vals):
        raise argparse.ArgumentTypeError("grid values must lie in [0, 1]")
    return tuple(vals)


def _emit(text: str, path):
    if path and path != "-":
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _num(v):
    v = float(v)
    return v if np.isfinite(v) else None


# -- fit ---------------------------------------------------------------------


def fit_report(X, spec, method, a=1.0, se="auto", options=None, data_label=None, spec_label=None) -> dict:
    """Everything ``dlsem fit`` prints, as a dict."""
    method = Method.parse(method)
    kind, info = SE_CHOICES[se]
    ms = MomentSet.from_data(X)
    res = fit(ms, spec, method, a, options)
    report = {
        "tool": "dlsem", "version": __version__, "seed": None,
        "data": data_label, "spec": spec_label, "n": ms.n, "p": ms.p,
        "method": {"name": method.cli_name, "a": a if method.tuned else None},
        "convergence": {
            "converged": res.converged, "iterations": res.iterations, "heywood": res.heywood,
            "reason": res.reason or None, "gradient_norm": _num(res.gradient_norm),
            "diagnostics": list(res.diagnostics),
        },
    }
    if not res.converged:
        return report
    ser = standard_errors(res, ms, se=kind, information=info if method.is_ml else None)
    report["loss"] = float(res.loss)
    report["se_kind"] = ser.kind + (f" ({info})" if info and method.is_ml else "")
    report["parameters"] = [
        {"name": n, "estimate": float(t), "se": _num(s), "z": _num(z)}
        for n, t, s, z in zip(spec.param_names(), res.theta, ser.se, ser.z)
    ]
    report["fit_statistics"] = {k: _num(v) if isinstance(v, float) else v for k, v in fit_statistics(res, ms).to_dict().items()}
    return report


def _fit_csv(report) -> str:
    buf = io.StringIO()
    buf.write(f"# dlsem {report['version']} method={report['method']['name']} a={report['method']['a']} seed={report['seed']}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "estimate", "se", "z"])
    for row in report.get("parameters", []):
        w.writerow([row["name"], row["estimate"], row["se"], row["z"]])
    if "fit_statistics" in report:
        w.writerow([])
        w.writerow(["statistic", "value"])
        for k, v in report["fit_statistics"].items():
            w.writerow([k, v])
    return buf.getvalue()


def cmd_fit(args) -> int:
    X, spec, dlabel, slabel = _load(args.data, args.spec)
    report = fit_report(X, spec, args.method, args.a, args.se, _options(args), dlabel, slabel)
    text = json.dumps(report, indent=2) + "\n" if args.out == "json" else _fit_csv(report)
    _emit(text, args.output)
    if not report["convergence"]["converged"]:
        print(f"dlsem: fit did not converge ({report['convergence']['reason']})", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


# -- tune --------------------------------------------------------------------


def cmd_tune(args) -> int:
    X, spec, dlabel, slabel = _load(args.data, args.spec)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = tune_a(X, spec, args.method, args.grid, B=args.bootstrap, seed=args.seed,
                     workers=args.workers, options=_options(args))
    for w in caught:
        print(f"dlsem: warning: {w.message}", file=sys.stderr)
    report = res.to_dict()
    report.update({"data": dlabel, "spec": slabel, "tool": "dlsem"})
    _emit(json.dumps(report, indent=2) + "\n", args.output)
    if args.curve_csv:
        with open(args.curve_csv, "w", newline="") as fh:
            fh.write(f"# dlsem {__version__} method={res.method.cli_name} B={res.B} seed={res.seed}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["a", "rmse", "convergence_rate"])
            for row in report["curve"]:
                w.writerow([row["a"], "" if row["rmse"] is None else row["rmse"], row["convergence_rate"]])
    return EXIT_OK


# -- simulate ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = StudyConfig.from_json(args.config, full_grid=True if args.full_grid else None)
    report = run_study(cfg, workers=args.workers)
    for path in report.write(args.out):
        print(path)
    return EXIT_OK


# -- describe ----------------------------------------------------------------


def cmd_describe(args) -> int:
    if args.data:
        names, X = read_csv(args.data)
    else:
        names, X = holzinger_data()
    S = sample_cov(X)
    out = {
        "tool": "dlsem", "version": __version__, "seed": None,
        "data": str(args.data or holzinger_path()), "n": X.shape[0], "p": X.shape[1], "variables": names,
        "S": S.tolist(), "multivariate_skewness": None, "multivariate_kurtosis": None,
    }
    try:
        out["multivariate_skewness"] = multivariate_skewness(X)
        out["multivariate_kurtosis"] = multivariate_kurtosis(X)
    except InvalidDataError as exc:
        print(f"dlsem: warning: {exc}; skewness and kurtosis are undefined", file=sys.stderr)
    _emit(json.dumps(out, indent=2) + "\n", args.output)
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlsem", description="Distributionally-weighted least squares for CFA models.")
    parser.add_argument("--version", action="version", version=f"dlsem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("data", nargs="?", help="CSV with a header row (default: bundled Holzinger-Swineford data)")
        p.add_argument("--spec", help="model JSON (default: bundled three-factor model)")
        p.add_argument("-o", "--output", help="output file (default: stdout)")

    def fit_options(p):
        p.add_argument("--max-iterations", type=int, default=200)
        p.add_argument("--param-tol", type=float, default=1e-6)
        p.add_argument("--grad-tol", type=float, default=1e-8)
        p.add_argument("--step-halvings", type=int, default=20)
        p.add_argument("--no-newton", action="store_true", help="plain (reweighted) Gauss-Newton steps only")

    methods = [m.cli_name for m in Method] + ["ml"]

    p = sub.add_parser("fit", help="estimate a model and report estimates, SEs and fit statistics")
    data_args(p)
    p.add_argument("--method", default="ml", type=str.lower, choices=methods)
    p.add_argument("--a", type=_a_value, default=1.0, help="tuning parameter in [0, 1]")
    p.add_argument("--se", default="auto", choices=list(SE_CHOICES))
    p.add_argument("--out", default="json", choices=["json", "csv"])
    fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("tune", help="bootstrap selection of the tuning parameter a")
    data_args(p)
    p.add_argument("--method", default="dls-m", type=str.lower, choices=[m.cli_name for m in Method if m.tuned])
    p.add_argument("--grid", type=_grid, default=FULL_GRID, help="start:stop:step or comma list (default 0:1:0.01)")
    p.add_argument("--bootstrap", "-B", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None, help=f"worker processes (default ${THREADS_ENV} or 1)")
    p.add_argument("--curve-csv", help="also write the RMSE curve as CSV")
    fit_options(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--full-grid", action="store_true", help="use the 0.01-step a grid for tuned methods")
    p.add_argument("--workers", type=int, default=None, help=f"worker processes (default ${THREADS_ENV} or 1)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("describe", help="sample size, covariance, multivariate skewness and kurtosis")
    p.add_argument("data", nargs="?")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_describe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "bootstrap", 1) < 1:
        parser.error("--bootstrap must be at least 1")
    try:
        return args.func(args)
    except CannotTuneError as exc:
        print(f"dlsem: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (SpecError, InvalidDataError, ValueError, OSError) as exc:
        print(f"dlsem: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DlsemError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"dlsem: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
