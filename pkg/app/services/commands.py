"""Command layer shared by the CLI and the HTTP routers.

Each command takes problem-file text (or an example name) plus options and
returns a Report together with its exit code.
"""


import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from app.core.config import settings, settings_override
from app.core.exceptions import EXIT_ERROR, EXIT_HOLDS, EXIT_VIOLATED, CapabilityError, InputError
from app.domain.expr import Point, VarSpace
from app.domain.problem import BilevelProblem, DualKind, FiberKind, ReformKind, ReformulatedNlp
from app.schemas.problem_file import ProblemFile
from app.schemas.reports import (
    CheckResult,
    Comparison,
    ComparisonTable,
    ConstraintEntry,
    ImplicitEntry,
    ReformulationReport,
    Report,
)
from app.services import cq, duality, verify
from app.services.examples import EXAMPLES, run_example
from app.services.lower_level import lower_level_nlp
from app.services.parser import parse_point, print_expr, problem_from_text
from app.services.reform import (
    DUAL_KINDS,
    STANDARD_KINDS,
    build_kkt_ref,
    build_reformulation,
    count_summary,
    ge_ref_feasibility,
    qualitative_rows,
)
from app.services.report import make_report, render_comparison

logger = logging.getLogger(__name__)

__all__ = [
    "CheckOptions",
    "CommandResult",
    "CHECKS",
    "cmd_reformulate",
    "cmd_examples",
    "cmd_compare",
    "cmd_check",
    "reformulation_report",
]


@dataclass
class CommandResult:
    report: Report
    exit_code: int


@dataclass
class CheckOptions:
    """Everything ``check`` accepts besides the problem and the check name."""

    point: str | None = None
    kind: str | None = None
    dual_kind: str = DualKind.LAGRANGE.value
    dual_point: str | None = None
    radius: float | None = None
    step: float | None = None
    tol: float | None = None
    tol_act: float | None = None
    workers: int | None = None
    lower_slater: bool = False

    def echo(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v not in (None, {}, False)}


def _overrides(pf: ProblemFile | None, tol: float | None = None, tol_act: float | None = None,
               step: float | None = None, radius: float | None = None, workers: int | None = None):
    return settings_override(
        tol=tol if tol is not None else (pf.tol if pf else None),
        tol_act=tol_act if tol_act is not None else (pf.tol_act if pf else None),
        step=step if step is not None else (pf.box_step if pf else None),
        radius=radius if radius is not None else (pf.box_radius if pf else None),
        workers=workers,
    )


# ---------------------------------------------------------------------------
# reformulate
# ---------------------------------------------------------------------------


def reformulation_report(ref: ReformulatedNlp) -> ReformulationReport:
    bp = ref.source
    return ReformulationReport(
        kind=ref.kind.value,
        problem=bp.name,
        blocks=dict(ref.space.blocks),
        provenance={k: v.value for k, v in ref.provenance.items()},
        sense=ref.nlp.sense.value,
        objective=print_expr(ref.nlp.objective),
        inequalities=[ConstraintEntry(role=r.value, expr=print_expr(e))
                      for r, e in zip(ref.inequality_roles, ref.nlp.inequalities, strict=True)],
        equalities=[ConstraintEntry(role=r.value, expr=print_expr(e))
                    for r, e in zip(ref.equality_roles, ref.nlp.equalities, strict=True)],
        implicit_constraints=[
            ImplicitEntry(name=c.name, description=c.description, budget=c.budget,
                          lipschitz_unreliable=c.lipschitz_unreliable)
            for c in ref.implicit_constraints
        ],
        constraint_count=ref.constraint_count(),
        counts=count_summary(bp, ref.kind),
        notes=list(ref.notes),
    )


def cmd_reformulate(text: str, kind: str, per_component: bool = False) -> CommandResult:
    pf, bp = problem_from_text(text)
    kind = ReformKind(_choice(kind, [k.value for k in ReformKind], "kind"))
    command = {"name": "reformulate", "kind": kind.value, "perComponent": per_component}
    with _overrides(pf):
        if kind is ReformKind.GE:
            result = {
                "kind": kind.value,
                "problem": bp.name,
                "message": "the generalized-equation reformulation is a feasibility test only; "
                           "use `check ge-feasible` at a point",
                "counts": count_summary(bp, kind),
            }
        elif kind is ReformKind.KKT:
            result = reformulation_report(build_kkt_ref(bp, per_component=per_component))
        else:
            result = reformulation_report(build_reformulation(bp, kind))
        return CommandResult(make_report(command, text, result), EXIT_HOLDS)


# ---------------------------------------------------------------------------
# examples / compare
# ---------------------------------------------------------------------------


def cmd_examples(name: str) -> CommandResult:
    names = list(EXAMPLES) if name == "all" else [name]
    reports = [run_example(n) for n in names]
    passed = all(r.passed for r in reports)
    result = reports if name == "all" else reports[0]
    command = {"name": "examples", "example": name}
    return CommandResult(make_report(command, name, result), EXIT_HOLDS if passed else EXIT_VIOLATED)


def comparison(dims: tuple[int, int, int, int] | BilevelProblem) -> Comparison:
    source = dims.dims if isinstance(dims, BilevelProblem) else dims
    tables = [
        ComparisonTable(
            title="Comparison of standard reformulations",
            counts=[count_summary(source, k) for k in STANDARD_KINDS],
            qualitative=qualitative_rows(STANDARD_KINDS),
        ),
        ComparisonTable(
            title="Comparison of duality-based reformulations",
            counts=[count_summary(source, k) for k in DUAL_KINDS],
            qualitative=qualitative_rows(DUAL_KINDS),
        ),
    ]
    dims_dict = dict(zip("nmpq", source, strict=True))
    return Comparison(dims=dims_dict, tables=tables, text=render_comparison(dims_dict, tables))


def cmd_compare(text: str) -> CommandResult:
    _, bp = problem_from_text(text)
    return CommandResult(make_report({"name": "compare"}, text, comparison(bp)), EXIT_HOLDS)


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


def _choice(value: str | None, allowed: list[str], what: str) -> str:
    if value is None or value not in allowed:
        raise InputError(f"{what} must be one of {', '.join(allowed)}; got {value!r}")
    return value


def _require_point(opts: CheckOptions) -> str:
    if not opts.point:
        raise InputError("this check needs --point")
    return opts.point


def _point_blocks(bp: BilevelProblem, text: str) -> Point:
    """Parse a point literal over whichever of x, y, z, u it names."""
    dims = {"x": bp.n, "y": bp.m, "z": bp.m, "u": bp.p}
    named = {part.partition("=")[0].strip() for part in text.split(";") if part.strip()}
    unknown = named - dims.keys()
    if unknown:
        raise InputError(f"unknown block(s) {', '.join(sorted(unknown))} in point")
    return parse_point(text, VarSpace.of(*((b, dims[b]) for b in dims if b in named)))


def _x_of(bp: BilevelProblem, opts: CheckOptions) -> np.ndarray:
    pt = _point_blocks(bp, _require_point(opts))
    if not pt.space.has("x"):
        raise InputError("point must name x")
    return pt.block("x")


def _xy_of(bp: BilevelProblem, opts: CheckOptions) -> tuple[np.ndarray, np.ndarray]:
    pt = parse_point(_require_point(opts), bp.space)
    return pt.block("x"), pt.block("y")


def _reform(bp: BilevelProblem, opts: CheckOptions, default: ReformKind | None = None) -> ReformulatedNlp:
    kind = opts.kind or (default.value if default else None)
    kind = _choice(kind, [k.value for k in ReformKind if k is not ReformKind.GE], "--kind")
    return build_reformulation(bp, kind)


def _verdict(ok: bool, yes: str = "holds", no: str = "violated") -> tuple[str, int]:
    return (yes, EXIT_HOLDS) if ok else (no, EXIT_VIOLATED)


def _cq_exit(verdict: str) -> int:
    return {"holds": EXIT_HOLDS, "violated": EXIT_VIOLATED}.get(verdict, EXIT_ERROR)


def _dual_kind(opts: CheckOptions) -> DualKind:
    return DualKind(_choice(opts.dual_kind, [k.value for k in DualKind], "--dual-kind"))


def _check_weak_duality(bp, opts):
    x, y = _xy_of(bp, opts)
    nlp = lower_level_nlp(bp, x)
    kind = _dual_kind(opts)
    if not opts.dual_point:
        raise InputError("weak-duality needs --dual-point")
    if kind is DualKind.LAGRANGE:
        dual_pt = parse_point(opts.dual_point, VarSpace.of(("u", bp.p))).values
    else:
        dual_pt = parse_point(opts.dual_point, duality.build_dual(nlp, kind).space)
    report = duality.check_weak_duality(nlp, Point(nlp.space, y), dual_pt, kind)
    return report, *_verdict(report.weak_duality_ok)


def _check_strong_duality(bp, opts):
    nlp = lower_level_nlp(bp, _x_of(bp, opts))
    report = duality.check_strong_duality(nlp, _dual_kind(opts))
    return report, *_verdict(bool(report.strong_duality_ok))


def _check_saddle(bp, opts):
    pt = parse_point(_require_point(opts), bp.lagrangian_space)
    nlp = lower_level_nlp(bp, pt.block("x"))
    u = pt.block("u") if bp.p else np.zeros(0)
    report = duality.check_saddle_point(nlp, Point(nlp.space, pt.block("y")), u)
    return report, *_verdict(report.is_saddle, "true", "false")


def _check_converse(bp, opts):
    nlp = lower_level_nlp(bp, _x_of(bp, opts))
    kind = _dual_kind(opts)
    if kind is DualKind.LAGRANGE:
        raise CapabilityError("converse checks cover the wolfe and mond_weir duals")
    if not opts.dual_point:
        raise InputError("converse needs --dual-point z=...;u=...")
    dual_space = duality.build_dual(nlp, kind).space
    dual_pt = parse_point(opts.dual_point, dual_space)
    pb, mb = duality.dual_blocks(nlp)
    u = dual_pt.block(mb) if dual_space.has(mb) else np.zeros(0)
    report = duality.converse_duality_certificate(nlp, Point(nlp.space, dual_pt.block(pb)), u, kind)
    if report.verdict != "applies":
        return report, "not_applicable", EXIT_ERROR
    return report, *_verdict(not report.counterexample, "holds", "counterexample")


def _check_lagrange_value(bp, opts):
    pt = parse_point(_require_point(opts), VarSpace.of(("x", bp.n), ("u", bp.p)))
    nlp = lower_level_nlp(bp, pt.block("x"))
    value = duality.lagrange_value_fn(nlp, pt.block("u") if bp.p else np.zeros(0))
    return value, *_verdict(value.finite, "finite", "-inf")


def _check_mfcq(bp, opts):
    ref = _reform(bp, opts)
    report = cq.check_mfcq(ref, parse_point(_require_point(opts), ref.space))
    return report, report.verdict, _cq_exit(report.verdict)


def _check_nsmfcq(bp, opts):
    ref = build_reformulation(bp, ReformKind.LD)
    report = cq.check_nsmfcq_ld(ref, parse_point(_require_point(opts), ref.space))
    return report, report.verdict, _cq_exit(report.verdict)


def _check_bcq(bp, opts):
    ref = build_reformulation(bp, ReformKind.LD)
    report = cq.check_bcq_closed_form(ref, parse_point(_require_point(opts), ref.space))
    return report, report.verdict, _cq_exit(report.verdict)


def _check_slater(bp, opts):
    report = cq.check_lower_slater(bp, _x_of(bp, opts))
    return report, report.verdict, _cq_exit(report.verdict)


def _local_target(bp, opts):
    return bp if opts.kind in (None, "obop") else _reform(bp, opts)


def _check_local(bp, opts):
    target = _local_target(bp, opts)
    space = target.space
    cert = verify.local_min_certificate(target, parse_point(_require_point(opts), space),
                                        opts.radius, opts.step, workers=opts.workers)
    return cert, *_verdict(cert.verdict == "no_better_point_at_resolution",
                           "no_better_point_at_resolution", "counterexample")


def _check_global(bp, opts):
    target = _local_target(bp, opts)
    space = target.space
    center = parse_point(opts.point, space) if opts.point else Point(space, np.zeros(space.total_dim))
    implicit = target.implicit_blocks() if isinstance(target, ReformulatedNlp) else []
    radius = settings.radius if opts.radius is None else opts.radius
    step = settings.step if opts.step is None else opts.step
    box = verify.Box.around(space, center, radius, step, settings.implicit_step, implicit)
    report = verify.brute_force_global(target, box, workers=opts.workers)
    return report, *_verdict(report.status == "optimal", "optimal", "infeasible")


def _fiber_kind(opts: CheckOptions, default: FiberKind = FiberKind.ELL) -> FiberKind:
    return FiberKind(_choice(opts.kind or default.value, [k.value for k in FiberKind], "--kind"))


def _check_enumerate_k(bp, opts):
    x, y = _xy_of(bp, opts)
    report = verify.enumerate_K(bp, _fiber_kind(opts), x, y)
    return report, *_verdict(not report.empty, "nonempty", "empty")


def _check_local_fiber(bp, opts):
    x, y = _xy_of(bp, opts)
    kind = _choice(opts.kind, ["kkt", "ld", "wd", "mwd"], "--kind")
    report = verify.quantified_local_check(bp, kind, x, y, opts.radius, opts.step,
                                           lower_slater=opts.lower_slater, workers=opts.workers)
    return report, *_verdict(report.aggregate == "all_local", "all_local", "some_counterexample")


def _check_ge(bp, opts):
    x, y = _xy_of(bp, opts)
    report = ge_ref_feasibility(bp, x, y)
    return report, *_verdict(report.feasible, "feasible", "infeasible")


def _check_probe(bp, opts):
    x, y = _xy_of(bp, opts)
    report = verify.inner_semicompactness_probe(bp, _fiber_kind(opts), x, y, opts.radius)
    return report, *_verdict(report.verdict == "bounded_evidence", "bounded_evidence", "unbounded_evidence")


CHECKS: dict[str, Callable] = {
    "weak-duality": _check_weak_duality,
    "strong-duality": _check_strong_duality,
    "saddle": _check_saddle,
    "mfcq": _check_mfcq,
    "nsmfcq": _check_nsmfcq,
    "bcq": _check_bcq,
    "slater": _check_slater,
    "local": _check_local,
    "global": _check_global,
    "enumerate-K": _check_enumerate_k,
    "local-fiber": _check_local_fiber,
    "ge-feasible": _check_ge,
    "probe-isc": _check_probe,
    "converse": _check_converse,
    "lagrange-value": _check_lagrange_value,
}


def cmd_check(text: str, what: str, opts: CheckOptions | None = None) -> CommandResult:
    opts = opts or CheckOptions()
    handler = CHECKS.get(what)
    if handler is None:
        raise InputError(f"unknown check '{what}'; expected one of {', '.join(CHECKS)}")
    pf, bp = problem_from_text(text)
    with _overrides(pf, opts.tol, opts.tol_act, opts.step, opts.radius, opts.workers):
        detail, verdict, exit_code = handler(bp, opts)
        logger.info("check %s on '%s': %s", what, bp.name, verdict)
        result = CheckResult(what=what, verdict=verdict, exit_code=exit_code, detail=detail)
        command = {"name": "check", "what": what, **opts.echo()}
        return CommandResult(make_report(command, text, result), exit_code)
