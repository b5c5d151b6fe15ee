"""Command-line interface: ``fit``, ``compare`` and ``simulate``.

Exit codes: 0 converged, 2 answered but not converged (or a partial
sweep), 1 error. Usage errors also exit 1 so that 2 stays unambiguous.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .datasets import DATASETS, default_sim_parameters, load_dataset
from .errors import ReservingError, ReservingWarning, UnsupportedStructureForPrediction
from .model import CorrelationKind, MeanStructure, ModelSpec, VarianceFunction, VarianceKind
from .pipeline import STANDARD_MODELS, Analysis, analyze, compare, sweep_threads
from .simulate import SimSpec, mc_validate
from .triangle import Kind, Triangle, read_triangle

__all__ = ["main", "RunConfig", "canonical_json", "report_dict", "render_table", "render_compare_table"]

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2

_CORR_CHOICES = ("ind", "exch", "ar1", "mdep", "unstr")
_MEAN_CHOICES = ("chain-ladder", "hoerl", "hoerl-curve")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# --- configuration -----------------------------------------------------------------


def _parse_corr(text: str) -> tuple[CorrelationKind, Optional[int]]:
    """``ind|exch|ar1|unstr|mdep|mdep:<m>``."""
    name, _, m = text.partition(":")
    if name not in _CORR_CHOICES:
        raise argparse.ArgumentTypeError(f"invalid correlation {text!r} (choose from {', '.join(_CORR_CHOICES)})")
    kind = CorrelationKind.coerce(name)
    if m:
        if kind is not CorrelationKind.M_DEPENDENT:
            raise argparse.ArgumentTypeError("':<m>' is only valid with mdep")
        try:
            return kind, int(m)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid m in {text!r}") from None
    return kind, None


@dataclass(frozen=True)
class RunConfig:
    triangle: str
    format: str = "wide"
    kind: Optional[Kind] = None
    mean: MeanStructure = MeanStructure.CHAIN_LADDER
    variance: VarianceFunction = VarianceFunction("linear")
    correlation: CorrelationKind = CorrelationKind.INDEPENDENCE
    m: int = 1
    out: str = "table"
    tol: float = 1e-10
    max_iter: int = 200
    with_mse: bool = True

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        variance = getattr(args, "variance", "linear")
        power = getattr(args, "power", None)
        if power is not None and variance != "power":
            raise ValueError("--power is only valid with --variance power")
        corr, m_inline = getattr(args, "corr", (CorrelationKind.INDEPENDENCE, None))
        m = getattr(args, "m", None)
        if m is not None and m_inline is not None and m != m_inline:
            raise ValueError(f"conflicting m values {m_inline} and {m}")
        m = m if m is not None else m_inline
        if m is not None and corr is not CorrelationKind.M_DEPENDENT:
            raise ValueError("--m is only valid with --corr mdep")
        if args.tol <= 0 or args.max_iter < 1:
            raise ValueError("--tol must be positive and --max-iter at least 1")
        vf = VarianceFunction(variance) if power is None else VarianceFunction(variance, power)
        return cls(
            triangle=args.triangle,
            format=args.format,
            kind=None if args.kind is None else Kind.coerce(args.kind),
            mean=MeanStructure.coerce(args.mean),
            variance=vf,
            correlation=corr,
            m=1 if m is None else m,
            out=args.out,
            tol=args.tol,
            max_iter=args.max_iter,
            with_mse=not args.no_mse,
        )

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.mean, self.variance, self.correlation, self.m)

    def load(self) -> Triangle:
        """A file path, or a bundled dataset name (``taylor_ashe``, ``abc``)."""
        path = Path(self.triangle)
        if not path.exists() and path.stem.lower().replace("-", "_") in DATASETS and self.format == "wide":
            t = load_dataset(path.stem)
            if self.kind is not None and self.kind is not t.kind:
                raise ValueError(f"bundled dataset {path.stem!r} is stored as {t.kind.value}")
            return t
        return read_triangle(path, format=self.format, kind=self.kind or Kind.INCREMENTAL)


# --- serialisation -----------------------------------------------------------------


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        r = float(f"{x:.10g}")
        return r if math.isfinite(r) else x
    return obj


def canonical_json(obj) -> str:
    """Sorted keys, floats at 10 significant digits, NaN/inf as null; idempotent under re-parsing."""
    return json.dumps(_canonical(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def report_dict(a: Analysis) -> dict:
    f, r = a.fit, a.report
    return {
        "model": r.model,
        "convergence": {
            "converged": f.converged,
            "iterations": f.iterations,
            "score_norm": f.score_norm,
            "step_norm": f.step_norm,
        },
        "parameters": f.builder.parameter_names,
        "theta": f.theta,
        "phi": f.phi,
        "vartheta": f.vartheta,
        "reserves": [{"i": y.i, "reserve": y.reserve, "mse": y.mse, "rmse_pct": y.rmse_pct} for y in r.years],
        "total": {"reserve": r.total_reserve, "mse": r.total_mse, "rmse_pct": r.total_rmse_pct},
        "criteria": a.criteria.as_dict(),
        "warnings": r.warnings,
    }


def _thousands(x) -> str:
    return "-" if x is None else f"{x / 1000.0:,.0f}"


def _pct(x, digits=2) -> str:
    return "-" if x is None else f"{x:.{digits}f}"


def render_table(a: Analysis) -> str:
    """Reserves in thousands with rmse%, followed by estimates and criteria."""
    f, r = a.fit, a.report
    it = f"{f.iterations} iteration" + ("" if f.iterations == 1 else "s")
    status = f"converged in {it}" if f.converged else f"NOT converged after {it}"
    lines = [f"GEE {f.spec.label}  (n={r.model['n']}, {status})", ""]
    lines.append(f"{'Year':>5}  {'Reserve':>10}  {'rmse%':>7}")
    for y in r.years:
        lines.append(f"{y.i:>5}  {_thousands(y.reserve):>10}  {_pct(y.rmse_pct):>7}")
    lines.append(f"{'Total':>5}  {_thousands(r.total_reserve):>10}  {_pct(r.total_rmse_pct):>7}")
    lines.append("")
    lines.append(f"phi = {f.phi:.6g}")
    if len(f.vartheta):
        lines.append("vartheta = " + ", ".join(f"{v:.5f}" for v in f.vartheta))
    c = a.criteria
    lines.append(f"QIC = {c.qic:.2f}  QIC_HH = {c.qic_hh:.2f}  CIC = {c.cic:.3f}  CIC_HH = {c.cic_hh:.3f}")
    lines.append("(amounts in thousands)")
    return "\n".join(lines) + "\n"


def render_csv(a: Analysis) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "reserve", "mse", "rmse_pct"])
    for y in a.report.years:
        w.writerow([y.i, repr(y.reserve), "" if y.mse is None else repr(y.mse), "" if y.rmse_pct is None else repr(y.rmse_pct)])
    r = a.report
    w.writerow(["total", repr(r.total_reserve), "" if r.total_mse is None else repr(r.total_mse),
                "" if r.total_rmse_pct is None else repr(r.total_rmse_pct)])
    return buf.getvalue()


_COLUMN_ORDER = [(c.short, v) for c in (CorrelationKind.INDEPENDENCE, CorrelationKind.EXCHANGEABLE, CorrelationKind.AR1)
                 for v in ("linear", "quadratic")]


def _column_label(key) -> str:
    corr, var = key
    return {"ind": "Ind", "exch": "Exch", "ar1": "AR(1)"}[corr] + (" lin" if var == "linear" else " quad")


def render_compare_table(results: dict) -> str:
    """Years down, the six models across."""
    keys = [k for k in _COLUMN_ORDER if k in results]
    ok = {k: v for k, v in results.items() if isinstance(v, Analysis)}
    n = max((a.report.model["n"] for a in ok.values()), default=0)
    width = 17
    head = f"{'':>8}" + "".join(f"{_column_label(k):>{width}}" for k in keys)
    lines = [head]

    def cell(k, fn):
        a = results[k]
        if not isinstance(a, Analysis):
            return f"{'failed':>{width}}"
        mark = "" if a.fit.converged else "*"
        return f"{fn(a) + mark:>{width}}"

    for i in range(1, n + 1):
        lines.append(f"{i:>8}" + "".join(cell(k, lambda a: _thousands(a.report.years[i - 1].reserve)) for k in keys))
    lines.append(f"{'Total':>8}" + "".join(cell(k, lambda a: _thousands(a.report.total_reserve)) for k in keys))
    lines.append(f"{'rmse%':>8}" + "".join(cell(k, lambda a: _pct(a.report.total_rmse_pct)) for k in keys))
    lines.append(f"{'QIC_HH':>8}" + "".join(cell(k, lambda a: f"{a.criteria.qic_hh:,.2f}") for k in keys))
    lines.append(f"{'CIC_HH':>8}" + "".join(cell(k, lambda a: f"{a.criteria.cic_hh:.2f}") for k in keys))
    lines.append("(reserves in thousands; * = not converged)")
    for k in keys:
        if not isinstance(results[k], Analysis):
            e = results[k]
            lines.append(f"{_column_label(k)}: {type(e).__name__}: {e}")
    return "\n".join(lines) + "\n"


def render_compare_csv(results: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["correlation", "variance", "i", "reserve", "mse", "rmse_pct", "qic_hh", "cic_hh", "converged", "error"])
    for k in _COLUMN_ORDER:
        if k not in results:
            continue
        a = results[k]
        if not isinstance(a, Analysis):
            w.writerow([*k, "", "", "", "", "", "", "", f"{type(a).__name__}: {a}"])
            continue
        for y in a.report.years:
            w.writerow([*k, y.i, repr(y.reserve), "" if y.mse is None else repr(y.mse),
                        "" if y.rmse_pct is None else repr(y.rmse_pct), "", "", a.fit.converged, ""])
        r = a.report
        w.writerow([*k, "total", repr(r.total_reserve), "" if r.total_mse is None else repr(r.total_mse),
                    "" if r.total_rmse_pct is None else repr(r.total_rmse_pct),
                    repr(a.criteria.qic_hh), repr(a.criteria.cic_hh), a.fit.converged, ""])
    return buf.getvalue()


# --- commands ----------------------------------------------------------------------


def cmd_fit(args, out=sys.stdout, err=sys.stderr) -> int:
    config = RunConfig.from_args(args)
    if config.correlation is CorrelationKind.UNSTRUCTURED and config.with_mse:
        raise UnsupportedStructureForPrediction(
            "the unstructured correlation has no future-cell extension; rerun with --no-mse")
    triangle = config.load()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ReservingWarning)
        a = analyze(triangle, config.spec, tol=config.tol, max_iter=config.max_iter, with_mse=config.with_mse)
    if config.out == "json":
        out.write(canonical_json(report_dict(a)))
    elif config.out == "csv":
        out.write(render_csv(a))
    else:
        out.write(render_table(a))
    for msg in a.report.warnings:
        err.write(f"warning: {msg}\n")
    return EXIT_OK if a.fit.converged else EXIT_NOT_CONVERGED


def cmd_compare(args, out=sys.stdout, err=sys.stderr) -> int:
    args.variance, args.power, args.corr, args.m = "linear", None, (CorrelationKind.INDEPENDENCE, None), None
    config = RunConfig.from_args(args)
    triangle = config.load()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ReservingWarning)
        results = compare(triangle, config.mean, tol=config.tol, max_iter=config.max_iter,
                          with_mse=config.with_mse, threads=sweep_threads())
    if config.out == "json":
        models = []
        for k in _COLUMN_ORDER:
            a = results[k]
            if isinstance(a, Analysis):
                models.append(report_dict(a))
            else:
                models.append({"model": {"correlation": k[0], "variance": k[1]}, "error": f"{type(a).__name__}: {a}"})
        out.write(canonical_json({"models": models}))
    elif config.out == "csv":
        out.write(render_compare_csv(results))
    else:
        out.write(render_compare_table(results))
    failed = [k for k, a in results.items() if not isinstance(a, Analysis)]
    stalled = [k for k, a in results.items() if isinstance(a, Analysis) and not a.fit.converged]
    for k in failed:
        err.write(f"error: {_column_label(k)}: {type(results[k]).__name__}: {results[k]}\n")
    for k in stalled:
        err.write(f"warning: {_column_label(k)} did not converge\n")
    if len(failed) == len(results):
        return EXIT_ERROR
    return EXIT_NOT_CONVERGED if failed or stalled else EXIT_OK


def _sim_spec(args) -> tuple[SimSpec, ModelSpec]:
    if args.theta_file:
        params = json.loads(Path(args.theta_file).read_text(encoding="utf-8"))
    else:
        params = default_sim_parameters()
    if "theta" not in params or "phi" not in params:
        raise ValueError("theta file needs 'theta' and 'phi' entries")
    mean = MeanStructure.coerce(params.get("mean", "chain_ladder"))
    p = len(params["theta"])
    n_from_theta = {MeanStructure.CHAIN_LADDER: (p + 1) / 2, MeanStructure.HOERL: (p + 2) / 3,
                    MeanStructure.HOERL_CURVE: p - 2}[mean]
    n = args.n if args.n is not None else int(params.get("n", n_from_theta))
    if n != n_from_theta:
        raise ValueError(f"theta of length {p} does not fit a {mean.value} design with n={n}")
    variance = args.variance or params.get("variance", "quadratic")
    if args.power is not None and variance != "power":
        raise ValueError("--power is only valid with --variance power")
    vf = VarianceFunction(variance) if args.power is None else VarianceFunction(variance, args.power)
    corr, m_inline = args.corr
    m = args.m if args.m is not None else (m_inline or 1)
    vartheta = tuple(float(v) for v in args.vartheta.split(",")) if args.vartheta else ()
    if corr is CorrelationKind.INDEPENDENCE:
        vartheta = ()
    spec = SimSpec(n=n, theta=params["theta"], phi=float(params["phi"]), correlation=corr, vartheta=vartheta,
                   variance=vf, family=args.family, seed=args.seed, m=m, mean_structure=mean)
    fit_corr, fit_m = args.fit_corr if args.fit_corr is not None else (corr, m)
    return spec, ModelSpec(mean, vf, fit_corr, fit_m or m)


def cmd_simulate(args, out=sys.stdout, err=sys.stderr) -> int:
    if args.tol <= 0 or args.max_iter < 1:
        raise ValueError("--tol must be positive and --max-iter at least 1")
    spec, fit_spec = _sim_spec(args)
    threads = sweep_threads(default=0)
    summary = mc_validate(spec, args.reps, fit_spec=fit_spec, tol=args.tol, max_iter=args.max_iter, threads=threads)
    out.write(canonical_json(summary))
    if summary["failures"]:
        err.write(f"warning: {len(summary['failures'])} of {args.reps} replications failed\n")
    if summary["successful"] == 0:
        return EXIT_ERROR
    return EXIT_NOT_CONVERGED if summary["non_converged"] else EXIT_OK


# --- parser ------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--tol", type=float, default=1e-10, help="sup-norm step tolerance (default 1e-10)")
    p.add_argument("--max-iter", type=int, default=200, help="iteration cap (default 200)")


def _add_input(p):
    p.add_argument("--triangle", required=True,
                   help="CSV path, or a bundled dataset name: " + ", ".join(sorted(DATASETS)))
    p.add_argument("--format", choices=("wide", "long"), default="wide")
    p.add_argument("--kind", choices=("inc", "cum"), default=None,
                   help="incremental or cumulative (default: inc; bundled data know their own kind)")
    p.add_argument("--mean", choices=_MEAN_CHOICES, default="chain-ladder")
    p.add_argument("--out", choices=("table", "json", "csv"), default="table")
    p.add_argument("--no-mse", action="store_true", help="skip the MSE of prediction")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gee-reserve", description="GEE claims reserving on run-off triangles.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit one model and report reserves, MSE and criteria")
    _add_input(p)
    p.add_argument("--variance", choices=[k.value for k in VarianceKind], default="linear")
    p.add_argument("--power", type=float, default=None, help="power-variance exponent (default 1.5)")
    p.add_argument("--corr", type=_parse_corr, default=(CorrelationKind.INDEPENDENCE, None),
                   metavar="{ind,exch,ar1,mdep[:m],unstr}")
    p.add_argument("--m", type=int, default=None, help="lag order for mdep")
    _add_common(p)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("compare", help="fit {ind, exch, ar1} x {linear, quadratic}")
    _add_input(p)
    _add_common(p)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("simulate", help="Monte Carlo check of the sandwich and MSE estimators")
    p.add_argument("--n", type=int, default=None, help="triangle size (default: implied by theta)")
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--theta-file", default=None,
                   help="JSON with 'theta' and 'phi' (default: bundled parameters for n=10)")
    p.add_argument("--corr", type=_parse_corr, default=(CorrelationKind.INDEPENDENCE, None),
                   metavar="{ind,exch,ar1,mdep[:m]}")
    p.add_argument("--vartheta", default=None, help="true correlation parameter(s), comma separated")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--variance", choices=[k.value for k in VarianceKind], default=None)
    p.add_argument("--power", type=float, default=None)
    p.add_argument("--family", choices=("gamma", "lognormal"), default="gamma")
    p.add_argument("--fit-corr", type=_parse_corr, default=None, help="working correlation to fit (default: --corr)")
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(handler=cmd_simulate)
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    try:
        return args.handler(args, out=out, err=err)
    except (ReservingError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        err.write(f"error: {type(exc).__name__}: {msg}\n")
        return EXIT_ERROR


def main_entry() -> None:
    sys.exit(main())
