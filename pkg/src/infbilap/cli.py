"""Command-line entry point: ``infbilap <subcommand> [flags]``.

Exit status 0 on success, 1 on numerical failure or a failed verification,
2 on bad usage. ``LINFTY_OUT`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .core import (
    TEST1,
    ConvergenceError,
    EnergySpec,
    FullHessianSq,
    HermiteData1D,
    ProjectionSq,
    RejectedDataError,
    ScalarField,
    eval_piecewise_quadratic,
    format_csv,
    power_energy,
)
from .exact1d import SearchFailure, absolute_minimiser, critical_point_solution, p_exact_solution

log = logging.getLogger("infbilap")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
BUILTINS_1D = {"test1": TEST1}
BUILTINS_2D = ("test2",)


class UsageError(ValueError):
    pass


def schema_name(filename: str) -> str:
    """Schema file (under ``infbilap/schemas``) that documents an emitted JSON file."""
    if filename.endswith(".meta.json"):
        return "meta"
    if filename.startswith("verify_"):
        return "verify"
    stem = filename.removesuffix(".json")
    if stem not in {"exact1d", "solve1d_report", "solve2d_metrics", "residual", "sweep", "error"}:
        raise KeyError(f"no schema for {filename}")
    return stem


def load_schema(name: str) -> dict:
    from importlib.resources import files

    return json.loads(files("infbilap").joinpath("schemas", f"{name}.schema.json").read_text())


@dataclass
class RunConfig:
    command: str
    out: Path
    options: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        self.outputs.append(name)
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, dumps(obj))

    def write_meta(self, status: int):
        meta = {
            "command": self.command,
            "config": self.options,
            "outputs": list(self.outputs),
            "exit_status": status,
            "versions": {
                "infbilap": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
        }
        (self.out / f"{self.command}.meta.json").write_text(dumps(meta), encoding="utf-8")


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# argument helpers


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_data_1d(p: argparse.ArgumentParser):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--data", nargs=6, type=float, metavar=("a", "b", "A", "B", "Ap", "Bp"))
    g.add_argument("--builtin", choices=sorted(BUILTINS_1D))
    g.add_argument("--data-file", type=Path, help="JSON object with keys a, b, A, B, Aprime, Bprime")


def _data_1d(args) -> HermiteData1D:
    if args.builtin:
        return BUILTINS_1D[args.builtin]
    if args.data is not None:
        return HermiteData1D(*args.data)
    try:
        obj = json.loads(args.data_file.read_text())
        return HermiteData1D(*(float(obj[k]) for k in ("a", "b", "A", "B", "Aprime", "Bprime")))
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"cannot read data file {args.data_file}: {exc}")


def parse_spec(text: str, dim: int = 1) -> EnergySpec:
    """``sq``/``full``, ``laplacian``, ``projection:a11[,a12,a22]`` or ``power:c_plus,c_minus[,r]``."""
    name, _, rest = text.partition(":")
    vals = [float(v) for v in rest.split(",") if v.strip()] if rest else []
    if name in ("sq", "full"):
        return FullHessianSq()
    if name == "laplacian":
        return ProjectionSq.laplacian(dim)
    if name == "projection":
        if len(vals) == 1 and dim == 1:
            return ProjectionSq([[vals[0]]])
        if len(vals) == 3 and dim == 2:
            return ProjectionSq([[vals[0], vals[1]], [vals[1], vals[2]]])
        raise UsageError(f"projection needs 1 (1D) or 3 (2D) entries, got {vals}")
    if name == "power":
        if dim != 1 or len(vals) not in (2, 3):
            raise UsageError("power:c_plus,c_minus[,r] is a 1D integrand")
        return power_energy(*vals)
    raise UsageError(f"unknown energy spec {text!r}")


def _out_dir(args) -> Path:
    out = Path(os.environ.get("LINFTY_OUT") or args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"output directory {out} not writable: {exc}")
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} not writable")
    return out


def _options(args) -> dict:
    skip = {"func", "out"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in skip}


# ---------------------------------------------------------------------------
# subcommands


def _sample_rows(f, x):
    return np.column_stack([x, f(x, 0), f(x, 1), f(x, 2)])


def cmd_exact1d(args, cfg: RunConfig) -> int:
    d = _data_1d(args)
    x = np.linspace(d.a, d.b, args.samples)
    result: dict = {"data": dict(zip(("a", "b", "A", "B", "Aprime", "Bprime"), d.as_tuple())), "kind": args.kind}
    if args.kind == "absolute":
        spec = parse_spec(args.spec, 1)
        am = absolute_minimiser(d, None if isinstance(spec, FullHessianSq) else spec)
        result.update(
            spec=args.spec,
            solution=am.u.to_dict(),
            left_curvature=am.left_curvature,
            right_curvature=am.right_curvature,
            xi=am.xi,
            level=am.level,
        )
        u = am.u

        def f(t, k):
            return eval_piecewise_quadratic(u, t, k)

    elif args.kind == "critical":
        if args.level is None:
            raise UsageError("--kind critical needs --level C")
        cp = critical_point_solution(d, args.level)
        result.update(C=cp.C, xC=cp.xC, yC=cp.yC, K=cp.K, L=cp.L, solution=cp.u.to_dict())

        def f(t, k):
            return eval_piecewise_quadratic(cp.u, t, k)

    else:
        if args.p is None:
            raise UsageError("--kind p-exact needs --p")
        ps = p_exact_solution(d, args.p)
        result.update(
            p=ps.p,
            branch=ps.branch,
            kappa=ps.kappa,
            z=ps.z,
            lam=ps.lam,
            mu=ps.mu,
            singular_point=ps.singular_point,
            system_residual=ps.system_residual(),
            boundary_residual=ps.boundary_residual(),
        )

        def f(t, k):
            return ps(t, k)

    cfg.write_json("exact1d.json", result)
    cfg.write("exact1d.csv", format_csv(_sample_rows(f, x), header=["x", "u", "du", "d2u"]))
    return EXIT_OK


def _solve1d_job(d: HermiteData1D, ps, m: int, tol: float, max_iter: int) -> dict:
    from .solver1d import ContinuationSchedule, Mesh1D, p_continuation

    res = p_continuation(d, ContinuationSchedule(tuple(ps), tol, max_iter), Mesh1D.for_data(d, m))
    stages = []
    nodes = np.linspace(d.a, d.b, m + 1)
    for p, u, rep in zip(res.ps, res.solutions, res.reports):
        entry = {"report": rep.to_dict()}
        try:
            exact = p_exact_solution(d, p)
            entry["sup_error_vs_exact_nodes"] = float(np.max(np.abs(u(nodes) - exact(nodes))))
        except (ConvergenceError, RejectedDataError):
            entry["sup_error_vs_exact_nodes"] = None
        stages.append(entry)
    return {"m": m, "stages": stages, "error": res.error, "_result": res}


def cmd_solve1d(args, cfg: RunConfig) -> int:
    d = _data_1d(args)
    job = _solve1d_job(d, args.schedule, args.m, args.tol, args.max_iter)
    res = job.pop("_result")
    for p, u in zip(res.ps, res.solutions):
        x = np.linspace(d.a, d.b, args.samples)
        cfg.write(f"solve1d_p{p}.csv", format_csv(_sample_rows(lambda t, k: u(t, k), x), header=["x", "u", "du", "d2u"]))
    report = {"data": list(d.as_tuple()), "schedule": list(args.schedule), **job}
    cfg.write_json("solve1d_report.json", report)
    ok = res.error is None and all(r.converged for r in res.reports)
    return EXIT_OK if ok else EXIT_FAIL


def _boundary_2d(args):
    from .solver2d import BoundaryData

    if args.quadratic is not None:
        return BoundaryData.quadratic(*args.quadratic)
    return BoundaryData.test2()


def _solve2d_job(bd, ps, n: int, tol: float, max_iter: int):
    from .solver2d import Grid2D, p_continuation_2d

    return p_continuation_2d(bd, ps, Grid2D(n), tol=tol, max_iter=max_iter)


def cmd_solve2d(args, cfg: RunConfig) -> int:
    from .solver2d import laplacian_field

    bd = _boundary_2d(args)
    res = _solve2d_job(bd, args.schedule, args.n, args.tol, args.max_iter)
    stages = []
    for p, u, rep, met in zip(res.ps, res.fields, res.reports, res.metrics):
        lap = laplacian_field(u)
        cfg.write(f"solve2d_u_p{p}.csv", u.to_csv())
        cfg.write(f"solve2d_lap_p{p}.csv", lap.to_csv())
        if args.xyz:
            X, Y = lap.coordinates()
            rows = np.column_stack([X.ravel(), Y.ravel(), lap.values])
            cfg.write(f"solve2d_lap_p{p}.xyz", format_csv(rows, header=["x", "y", "lap"]))
        stages.append({"p": p, "report": rep.to_dict(), "metrics": met.to_dict()})
    cfg.write_json(
        "solve2d_metrics.json",
        {"boundary": bd.name, "params": bd.params, "n": args.n, "schedule": list(args.schedule), "stages": stages, "error": res.error},
    )
    ok = res.error is None and all(r.converged for r in res.reports)
    return EXIT_OK if ok else EXIT_FAIL


def _read_field(args) -> ScalarField:
    path = args.input
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}")
    if path.suffix == ".json":
        return ScalarField.from_json(text)
    if args.spacing is None or args.origin is None:
        raise UsageError("CSV input needs --spacing and --origin")
    return ScalarField.from_csv(text, args.spacing, args.origin)


def cmd_residual(args, cfg: RunConfig) -> int:
    from .residuals import SampledSource, StencilError, dsolution_levelcheck, jet, residual_a2inf

    fld = _read_field(args)
    spec = parse_spec(args.spec, fld.dim)
    src = SampledSource(fld)
    coords = [c.ravel() for c in fld.coordinates()]
    rows = []
    for k in range(fld.values.size):
        x = np.array([c[k] for c in coords])
        try:
            r = residual_a2inf(jet(src, x), spec)
        except StencilError:
            continue
        rows.append([*x, r])
    rows = np.asarray(rows)
    header = ["x", "residual"] if fld.dim == 1 else ["x", "y", "residual"]
    cfg.write("residual.csv", format_csv(rows, header=header))
    check = dsolution_levelcheck(fld, spec, tol=args.tol)
    vals = np.abs(rows[:, -1]) if rows.size else np.zeros(0)
    summary = {
        "spec": args.spec,
        "points": int(vals.size),
        "max": float(vals.max()) if vals.size else None,
        "median": float(np.median(vals)) if vals.size else None,
        "levelcheck": check.to_dict(),
    }
    cfg.write_json("residual.json", summary)
    return EXIT_OK


def cmd_verify(args, cfg: RunConfig) -> int:
    from .suites import run_suite

    report = run_suite(args.suite)
    cfg.write_json(f"verify_{args.suite}.json", report)
    for c in report["checks"]:
        log.info("%s %s value=%.3g tol=%.3g", "PASS" if c["passed"] else "FAIL", c["name"], c["value"], c["tolerance"])
    return EXIT_OK if report["passed"] else EXIT_FAIL


def _sweep_job(kind: str, payload: tuple) -> dict:
    if kind == "1d":
        job = _solve1d_job(*payload)
        job.pop("_result")
        return job
    bd_args, ps, n, tol, max_iter = payload
    from .solver2d import BoundaryData

    bd = BoundaryData.quadratic(*bd_args) if bd_args is not None else BoundaryData.test2()
    res = _solve2d_job(bd, ps, n, tol, max_iter)
    stages = [{"p": p, "report": r.to_dict(), "metrics": m.to_dict()} for p, r, m in zip(res.ps, res.reports, res.metrics)]
    return {"n": n, "stages": stages, "error": res.error}


def cmd_sweep(args, cfg: RunConfig) -> int:
    if args.problem == "1d":
        d = _data_1d(args)
        payloads = [(d, args.schedule, m, args.tol, args.max_iter) for m in args.sizes]
    else:
        payloads = [(args.quadratic, args.schedule, n, args.tol, args.max_iter) for n in args.sizes]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_job, [args.problem] * len(payloads), payloads))
    else:
        results = [_sweep_job(args.problem, pl) for pl in payloads]
    cfg.write_json("sweep.json", {"problem": args.problem, "schedule": list(args.schedule), "runs": results})
    ok = all(r["error"] is None and all(s["report"]["converged"] for s in r["stages"]) for r in results)
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infbilap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory (LINFTY_OUT overrides)")

    p = sub.add_parser("exact1d", help="exact 1D constructions")
    _add_data_1d(p)
    p.add_argument("--kind", choices=["absolute", "critical", "p-exact"], default="absolute")
    p.add_argument("--spec", default="sq", help="sq | power:c_plus,c_minus[,r] | projection:a")
    p.add_argument("--level", type=float, help="energy level C for --kind critical")
    p.add_argument("--p", type=int, help="even exponent for --kind p-exact")
    p.add_argument("--samples", type=int, default=201)
    common(p)
    p.set_defaults(func=cmd_exact1d)

    p = sub.add_parser("solve1d", help="1D p-Bilaplacian with continuation")
    _add_data_1d(p)
    p.add_argument("--schedule", type=_int_list, default=[2, 4, 12, 42, 202])
    p.add_argument("--m", type=int, default=256)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=400)
    p.add_argument("--samples", type=int, default=1025)
    common(p)
    p.set_defaults(func=cmd_solve1d)

    p = sub.add_parser("solve2d", help="2D p-Bilaplacian on [-1,1]^2")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--builtin", choices=BUILTINS_2D, default="test2")
    g.add_argument("--quadratic", nargs=6, type=float, metavar=("axx", "axy", "ayy", "ax", "ay", "a0"))
    p.add_argument("--schedule", type=_int_list, default=[4, 12, 42])
    p.add_argument("--n", type=int, default=65)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=400)
    p.add_argument("--xyz", action="store_true", help="also write x,y,lap triplets")
    common(p)
    p.set_defaults(func=cmd_solve2d)

    p = sub.add_parser("residual", help="residual field of a sampled function")
    p.add_argument("--input", type=Path, required=True, help="ScalarField JSON or CSV grid")
    p.add_argument("--spacing", type=float, nargs="+")
    p.add_argument("--origin", type=float, nargs="+")
    p.add_argument("--spec", default="sq")
    p.add_argument("--tol", type=float, default=1e-8)
    common(p)
    p.set_defaults(func=cmd_residual)

    from .suites import SUITES

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--suite", choices=sorted(SUITES), required=True)
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="independent solves over mesh sizes, optionally concurrent")
    p.add_argument("--problem", choices=["1d", "2d"], default="1d")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--data", nargs=6, type=float, metavar=("a", "b", "A", "B", "Ap", "Bp"))
    g.add_argument("--builtin", choices=sorted(BUILTINS_1D) + list(BUILTINS_2D))
    g.add_argument("--data-file", type=Path)
    g.add_argument("--quadratic", nargs=6, type=float, metavar=("axx", "axy", "ayy", "ax", "ay", "a0"))
    p.add_argument("--schedule", type=_int_list, default=[2, 4])
    p.add_argument("--sizes", type=_int_list, default=[64, 128, 256], help="m (1D) or n (2D) values")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=400)
    p.add_argument("--jobs", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "sweep" and args.problem == "1d":
            if args.quadratic is not None or args.builtin == "test2":
                raise UsageError("1D sweep needs 1D data")
            if args.builtin is None and args.data is None and args.data_file is None:
                args.builtin = "test1"
        if args.command == "sweep" and args.problem == "2d" and (args.data is not None or args.data_file or args.builtin == "test1"):
            raise UsageError("2D sweep takes --builtin test2 or --quadratic")
        cfg = RunConfig(args.command, _out_dir(args), _options(args))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"infbilap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        status = args.func(args, cfg)
    except (UsageError, RejectedDataError) as exc:
        print(f"infbilap: error: {exc}", file=sys.stderr)
        status = EXIT_USAGE
    except (ConvergenceError, SearchFailure) as exc:
        diag = getattr(exc, "diagnostics", None) or {}
        cfg.write_json("error.json", {"error": str(exc), "type": type(exc).__name__, "diagnostics": diag})
        print(f"infbilap: numerical failure: {exc}", file=sys.stderr)
        status = EXIT_FAIL
    cfg.write_meta(status)
    return status


if __name__ == "__main__":
    sys.exit(main())
