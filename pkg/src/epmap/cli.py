"""Command-line interface.

Subcommands:

* ``epmap analyze <spec>``   -- full analysis report (JSON)
* ``epmap example <p>``      -- analyze the builtin R^3 family at exponent p
* ``epmap cubic <tensor>``   -- regular-zero / isotropic-vector search
* ``epmap openness <spec>``  -- just the ball-cover verification

Exit codes: 0 on success, 2 on validation errors, 3 on numeric failures.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .cubic import common_isotropic_test, load_tensor_json, regular_zero_search
from .endpoint import cokernel, make_problem
from .errors import (
    ConstructionError,
    EpmapError,
    ExactBackendUnavailable,
    MembershipError,
    NumericFailure,
    SignalParseError,
    ValidationError,
)
from .openness import ball_cover_verify, build_corank1_family, make_evaluator
from .report import ReportFlags, coverage_csv_rows, report_to_json, run_report
from .systems import parse_system_spec

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rk-step", type=float, default=1e-3, help="RK4 step size")
    p.add_argument("--grid", type=int, default=101, help="time grid size")
    p.add_argument("--probe-max-freq", type=int, default=None)
    p.add_argument("--svd-tol", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--openness", choices=["off", "corank1", "general"], default="off"
    )
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--targets", type=int, default=125)
    p.add_argument("--cover-tol", type=float, default=1e-6)
    p.add_argument("--out", type=str, default=None, help="write JSON here")
    p.add_argument("--csv", type=str, default=None, help="coverage CSV path")


def _flags_from_args(args) -> ReportFlags:
    return ReportFlags(
        rk_step=args.rk_step,
        grid=args.grid,
        probe_max_freq=args.probe_max_freq,
        svd_tol=args.svd_tol,
        seed=args.seed,
        openness=args.openness,
        eps=args.eps,
        delta=args.delta,
        targets=args.targets,
        cover_tol=args.cover_tol,
        csv_path=args.csv,
    )


def _emit(payload: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)


def _cmd_analyze(args, source: str) -> int:
    spec = parse_system_spec(source)
    report = run_report(spec, _flags_from_args(args))
    _emit(report_to_json(report), args.out)
    return EXIT_OK


def _cmd_openness(args) -> int:
    spec = parse_system_spec(args.spec)
    fields = spec.fields()
    problem = make_problem(fields, spec.control(), spec.q0, rk_step=args.rk_step)
    ck = cokernel(problem)
    if ck.corank != 1:
        raise ConstructionError(f"openness subcommand expects corank 1, got {ck.corank}")
    tests = spec.test_controls()
    if not tests:
        raise ValidationError("spec provides no test control for the openness family")
    family = build_corank1_family(problem, ck.lambdas[0], tests[0])
    evaluator = make_evaluator(problem)
    verdict = ball_cover_verify(
        family,
        evaluator,
        delta=args.delta,
        eps=args.eps,
        samples=args.targets,
        tol=args.cover_tol,
    )
    if args.csv:
        rows = coverage_csv_rows(
            verdict.to_dict(), verdict.targets, verdict.reached, verdict.residuals
        )
        with open(args.csv, "w") as fh:
            fh.write("\n".join(rows) + "\n")
    _emit(json.dumps(verdict.to_dict(), indent=2, sort_keys=True), args.out)
    return EXIT_OK


def _cmd_cubic(args) -> int:
    T = load_tensor_json(args.tensor)
    result = {"n": T.n, "N": T.N}
    zero = regular_zero_search(T, attempts=args.attempts, seed=args.seed)
    result["regular_zero"] = zero.tolist() if zero is not None else None
    if args.lam is not None:
        lam = np.asarray([float(x) for x in args.lam.split(",")])
        witness = common_isotropic_test(T, lam, attempts=args.attempts, seed=args.seed)
        result["common_isotropic"] = witness.tolist() if witness is not None else None
    _emit(json.dumps(result, indent=2, sort_keys=True), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epmap",
        description="Third-order analysis of end-point maps of control-affine systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_an = sub.add_parser("analyze", help="run the full analysis on a spec")
    p_an.add_argument("spec", help="spec file or builtin:example-P")
    _add_common_flags(p_an)

    p_ex = sub.add_parser("example", help="analyze the builtin family")
    p_ex.add_argument("p", type=int, help="exponent of the builtin example")
    _add_common_flags(p_ex)

    p_cu = sub.add_parser("cubic", help="cubic-map analysis of a tensor file")
    p_cu.add_argument("tensor", help="JSON tensor [a][i][j][k]")
    p_cu.add_argument("--attempts", type=int, default=100)
    p_cu.add_argument("--seed", type=int, default=0)
    p_cu.add_argument("--lam", type=str, default=None, help="comma-separated covector")
    p_cu.add_argument("--out", type=str, default=None)

    p_op = sub.add_parser("openness", help="ball-cover verification only")
    p_op.add_argument("spec", help="spec file or builtin:example-P")
    _add_common_flags(p_op)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "analyze":
            return _cmd_analyze(args, args.spec)
        if args.command == "example":
            return _cmd_analyze(args, f"builtin:example-{args.p}")
        if args.command == "cubic":
            return _cmd_cubic(args)
        if args.command == "openness":
            return _cmd_openness(args)
        parser.error(f"unknown command {args.command}")
    except (ValidationError, SignalParseError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericFailure, ConstructionError, MembershipError, ExactBackendUnavailable) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EpmapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
