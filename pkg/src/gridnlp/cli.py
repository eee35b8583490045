"""Command-line entry point: ``gridnlp {solve,validate,bench,profile-gen}``.

Exit codes: 0 solved and validated, 1 solved with violations or not
converged, 2 usage or input error (a structured error JSON is printed).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .ipm import SolverConfig, solve
from .power import (
    DispatchSolution,
    LoadProfile,
    MatpowerError,
    MultiPeriodCase,
    build_multiperiod_opf,
    extract_dispatch,
    generate_load_profile,
    load_case,
    validate_solution,
)

SCHEMA_VERSION = 1
BENCH_FIELDS = ("case", "T", "nvars", "ncons", "iterations", "wall_time", "status")
DEFAULT_ROSTER = "case30:30:30:0.8,case118:168:60"

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad flags or unreadable inputs; maps to exit code 2."""


def _clean(obj):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _emit(doc, path=None):
    text = json.dumps(_clean(doc), indent=2)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _error(command, exc, path=None) -> int:
    doc = {"schema_version": SCHEMA_VERSION, "command": command,
           "error": {"type": type(exc).__name__, "message": str(exc)}}
    print(f"gridnlp {command}: error: {exc}", file=sys.stderr)
    try:
        _emit(doc, path)
    except OSError:
        _emit(doc)
    return EXIT_INPUT


# ------------------------------------------------------------------ options
def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _case_options(p):
    p.add_argument("--case", required=True, help="MATPOWER .m file or bundled case name (case9, case14, case30, case118)")
    p.add_argument("--periods", type=_positive_int, default=1, help="number of periods T")
    p.add_argument("--resolution", type=_positive_float, default=60.0, help="minutes per period")
    p.add_argument("--seed", type=int, default=0, help="load-profile seed")
    p.add_argument("--amplitude", type=float, default=0.2, help="sinusoid amplitude of the load profile")
    p.add_argument("--noise", type=float, default=0.02, help="uniform noise magnitude of the load profile")
    p.add_argument("--level", type=_positive_float, default=1.0, help="overall load multiplier")


def _model_options(p):
    p.add_argument("--profile", help="load-profile CSV to use instead of generating one")
    p.add_argument("--flow-model", choices=("pi", "single"), default="pi")


def _solver_options(p):
    p.add_argument("--tol", type=_positive_float, default=1e-4)
    p.add_argument("--max-iter", type=_positive_int, default=3000)
    p.add_argument("--linear-solver", choices=("sparse", "dense"), default="sparse")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridnlp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="build, solve and validate a multi-period OPF")
    _case_options(p)
    _model_options(p)
    _solver_options(p)
    p.add_argument("--out", help="report JSON path (default: stdout)")
    p.add_argument("--log", help="per-iteration CSV log path")
    p.add_argument("--solution", help="dispatch JSON output path")

    p = sub.add_parser("validate", help="check a dispatch JSON against the constraints")
    _case_options(p)
    _model_options(p)
    p.add_argument("--solution", required=True, help="dispatch JSON written by 'solve'")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", help="violation report JSON path (default: stdout)")

    p = sub.add_parser("bench", help="solve a roster of (case, T) instances and tabulate")
    p.add_argument("--roster", default=DEFAULT_ROSTER,
                   help="comma-separated case:T[:resolution[:level]] entries; empty for none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--amplitude", type=float, default=0.2)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--flow-model", choices=("pi", "single"), default="pi")
    _solver_options(p)
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("profile-gen", help="write a synthetic load profile CSV")
    _case_options(p)
    p.add_argument("--out", help="CSV path (default: stdout)")
    return parser


# ------------------------------------------------------------------ helpers
def _load_network(name):
    try:
        return load_case(name)
    except (OSError, MatpowerError, ValueError) as exc:
        raise InputError(str(exc)) from exc


def _profile(args, net):
    if getattr(args, "profile", None):
        try:
            prof = LoadProfile.from_csv(args.profile, args.resolution)
        except (OSError, ValueError, IndexError) as exc:
            raise InputError(f"cannot read profile {args.profile!r}: {exc}") from exc
        if prof.n_loads != len(net.load_bus):
            raise InputError(f"profile has {prof.n_loads} load columns, network has {len(net.load_bus)}")
        return prof
    try:
        return generate_load_profile(net, args.periods, args.resolution, args.seed, args.amplitude,
                                     args.noise, args.level)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _case(args):
    net = _load_network(args.case)
    return MultiPeriodCase(net, _profile(args, net), flow_model=args.flow_model)


def _config(args) -> SolverConfig:
    return SolverConfig(tol=args.tol, max_iter=args.max_iter, linear_solver=args.linear_solver)


def _run(case, config):
    """Build and solve; the returned wall time covers the solve call only."""
    t0 = time.perf_counter()
    model = build_multiperiod_opf(case)
    build_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    sol, report = solve(model, config)
    return model, sol, report, build_time, time.perf_counter() - t0


# ----------------------------------------------------------------- commands
def cmd_solve(args) -> int:
    case = _case(args)
    model, sol, report, build_time, wall = _run(case, _config(args))
    dispatch = extract_dispatch(model, sol.x, case)
    violations = validate_solution(case, dispatch, args.tol)
    doc = {
        "schema_version": SCHEMA_VERSION, "command": "solve", "case": case.network.name,
        "periods": case.T, "flow_model": case.flow_model, "tol": args.tol,
        "status": report.status, "objective": report.objective, "kkt": report.kkt,
        "max_violations": violations.max_scaled, "validated": violations.passed,
        "nvars": model.n, "ncons": model.m, "wall_time": wall, "build_time": build_time,
        "iterations": report.iterations, "restorations": report.restorations, "message": report.message,
    }
    if args.log:
        report.write_log_csv(args.log)
    if args.solution:
        _emit(dispatch.to_json(), args.solution)
    _emit(doc, args.out)
    return EXIT_OK if report.solved and violations.passed else EXIT_FAIL


def cmd_validate(args) -> int:
    case = _case(args)
    try:
        data = json.loads(Path(args.solution).read_text())
        dispatch = DispatchSolution.from_json(data)
        violations = validate_solution(case, dispatch, args.tol)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"bad solution {args.solution!r}: {exc}") from exc
    doc = {"schema_version": SCHEMA_VERSION, "command": "validate", **violations.to_json()}
    _emit(doc, args.out)
    return EXIT_OK if violations.passed else EXIT_FAIL


def parse_roster(text: str) -> list:
    """``"case30:30:30:0.8,case118:168"`` to ``[(case, T, resolution, level), ...]``."""
    rows = []
    for entry in filter(None, (e.strip() for e in text.split(","))):
        parts = entry.split(":")
        if not 2 <= len(parts) <= 4:
            raise InputError(f"roster entry {entry!r} is not case:T[:resolution[:level]]")
        try:
            T = int(parts[1])
            res = float(parts[2]) if len(parts) > 2 else 60.0
            level = float(parts[3]) if len(parts) > 3 else 1.0
        except ValueError as exc:
            raise InputError(f"roster entry {entry!r}: {exc}") from exc
        if T < 1 or res <= 0 or level <= 0:
            raise InputError(f"roster entry {entry!r} has a non-positive field")
        rows.append((parts[0], T, res, level))
    return rows


def cmd_bench(args) -> int:
    roster = parse_roster(args.roster)
    config = _config(args)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=BENCH_FIELDS, lineterminator="\n")
        writer.writeheader()
        for name, T, res, level in roster:
            row = {"case": name, "T": T, "nvars": "", "ncons": "", "iterations": "", "wall_time": "", "status": ""}
            try:
                net = load_case(name)
                prof = generate_load_profile(net, T, res, args.seed, args.amplitude, args.noise, level)
                model, _, report, _, wall = _run(MultiPeriodCase(net, prof, flow_model=args.flow_model), config)
                row.update(nvars=model.n, ncons=model.m, iterations=report.iterations,
                           wall_time=f"{wall:.3f}", status=report.status)
            except Exception as exc:  # a failed row is reported, the run continues
                row["status"] = f"error: {type(exc).__name__}: {exc}"
            writer.writerow(row)
            out.flush()
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_profile_gen(args) -> int:
    net = _load_network(args.case)
    prof = _profile(args, net)
    text = prof.to_csv(args.out)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "validate": cmd_validate, "bench": cmd_bench, "profile-gen": cmd_profile_gen}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (InputError, OSError) as exc:
        return _error(args.command, exc, getattr(args, "out", None))


if __name__ == "__main__":
    sys.exit(main())
