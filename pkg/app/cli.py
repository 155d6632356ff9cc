"""Command-line entry point: ``python -m app <command> ...``.

stdout carries only the report (JSON, or the comparison tables for
``compare`` without ``--json``); logs go to stderr.
"""


import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from app.core.exceptions import EXIT_ERROR, AppException, InputError, error_body
from app.core.logging import configure_logging
from app.domain.problem import DualKind, ReformKind
from app.services.commands import (
    CHECKS,
    CheckOptions,
    CommandResult,
    cmd_check,
    cmd_compare,
    cmd_examples,
    cmd_reformulate,
)
from app.services.examples import EXAMPLES
from app.services.report import render_json

logger = logging.getLogger(__name__)


def _read(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read problem file '{path}': {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise InputError(f"problem file '{path}' is not UTF-8") from exc


def _add_tolerance_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tol", type=float, default=None, help="Feasibility / KKT tolerance.")
    parser.add_argument("--tol-act", type=float, default=None, help="Active-set tolerance.")
    parser.add_argument("--step", type=float, default=None, help="Grid step for x and y.")
    parser.add_argument("--radius", type=float, default=None, help="Local-check radius or global box radius.")
    parser.add_argument("--workers", type=int, default=None, help="Parallel grid-scan workers.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m app",
        description="Single-level reformulations of bilevel problems and their verification.",
    )
    parser.add_argument("--json", action="store_true",
                        help="Force JSON output (default for all but compare).")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging on stderr.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reformulate", help="Emit a single-level reformulation with its counts.")
    p.add_argument("file", help="Problem file, or - for stdin.")
    p.add_argument("--kind", required=True, choices=[k.value for k in ReformKind])
    p.add_argument("--per-component", action="store_true",
                   help="KKT: one complementarity row per constraint.")

    p = sub.add_parser("examples", help="Run a built-in worked example and assert its outcomes.")
    p.add_argument("name", choices=[*EXAMPLES, "all"])

    p = sub.add_parser("compare", help="Variable/constraint count tables for a problem's dimensions.")
    p.add_argument("file", help="Problem file, or - for stdin.")
    p.add_argument("--json", action="store_true", dest="sub_json", help="JSON report instead of tables.")

    p = sub.add_parser("check", help="Run a duality, CQ or minimality check.")
    p.add_argument("file", help="Problem file, or - for stdin.")
    p.add_argument("what", choices=list(CHECKS))
    p.add_argument("--point", default=None, help="Point literal, e.g. 'x=0;y=1;u=0,1'.")
    p.add_argument("--kind", default=None, help="Reformulation or fiber kind the check applies to.")
    p.add_argument("--dual-kind", default=DualKind.LAGRANGE.value, choices=[k.value for k in DualKind])
    p.add_argument("--dual-point", default=None,
                   help="Dual point literal for weak-duality and saddle checks.")
    p.add_argument("--lower-slater", action="store_true", help="Local fiber check restricted to z = y.")
    _add_tolerance_flags(p)
    return parser


def run(args: argparse.Namespace) -> CommandResult:
    if args.command == "reformulate":
        return cmd_reformulate(_read(args.file), args.kind, per_component=args.per_component)
    if args.command == "examples":
        return cmd_examples(args.name)
    if args.command == "compare":
        return cmd_compare(_read(args.file))
    opts = CheckOptions(
        point=args.point,
        kind=args.kind,
        dual_kind=args.dual_kind,
        dual_point=args.dual_point,
        radius=args.radius,
        step=args.step,
        tol=args.tol,
        tol_act=args.tol_act,
        workers=args.workers,
        lower_slater=args.lower_slater,
    )
    return cmd_check(_read(args.file), args.what, opts)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        result = run(args)
    except AppException as exc:
        logger.error("%s: %s", exc.code, exc.message)
        sys.stdout.write(json.dumps(error_body(exc.code, exc.message), sort_keys=True, indent=2) + "\n")
        return EXIT_ERROR

    if args.command == "compare" and not (args.json or args.sub_json):
        sys.stdout.write(result.report.result.text)
    else:
        sys.stdout.write(render_json(result.report))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
