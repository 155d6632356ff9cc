"""Lagrange, Wolfe and Mond–Weir duals of a convex program and their duality relations.

For ``min p(w) s.t. q(w) <= 0`` with Lagrangian 𝓛(w, v) = p(w) + vᵀq(w):
  Lagrange    max φ_ℓ(v),            φ_ℓ(v) = inf_w 𝓛(w, v) for v >= 0
  Wolfe       max 𝓛(ŵ, v̂)  s.t. ∇_w 𝓛(ŵ, v̂) = 0, v̂ >= 0
  Mond–Weir   max p(ŵ)      s.t. ∇_w 𝓛(ŵ, v̂) = 0, v̂ᵀq(ŵ) >= 0, v̂ >= 0
Duals are stored with sense maximize; solvers negate internally.
"""


import logging
import math
from collections.abc import Sequence

import numpy as np

from app.core.config import settings
from app.core.exceptions import CapabilityError, InputError
from app.domain.expr import (
    Expr,
    Point,
    VarSpace,
    add,
    block_vars,
    const,
    derivative,
    dot,
    neg,
    rename,
)
from app.domain.problem import DualKind, Nlp, Sense
from app.schemas.reports import (
    ConverseReport,
    DualCertificate,
    DualityReport,
    LagrangeValue,
    SaddlePointReport,
)
from app.services.calculus import gradient_full, hessian_full, quadratic_form
from app.services.cq import check_slater
from app.services.solver import (
    feasibility_violations,
    kkt_residual_values,
    require_feasible,
    solve_convex,
)

logger = logging.getLogger(__name__)

__all__ = [
    "lagrange_value_fn",
    "build_wolfe_dual",
    "build_mond_weir_dual",
    "dual_blocks",
    "check_weak_duality",
    "check_strong_duality",
    "check_saddle_point",
    "converse_duality_certificate",
    "wolfe_surrogate_value",
]


def _require_inequality_form(nlp: Nlp, what: str) -> str:
    if nlp.sense is not Sense.MINIMIZE:
        raise InputError(f"{what} needs a minimization program")
    if nlp.equalities:
        raise InputError(f"{what} supports inequality constraints only")
    return nlp.single_block()


def _multiplier(v, size: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=np.float64)).reshape(-1)
    if arr.size != size:
        raise InputError(f"multiplier has {arr.size} entries, program has {size} inequalities")
    return arr


def _lagrangian_at(nlp: Nlp, v: np.ndarray) -> Expr:
    return add(nlp.objective, dot([const(x) for x in v], nlp.inequalities))


# ---------------------------------------------------------------------------
# Lagrange value function
# ---------------------------------------------------------------------------


def lagrange_value_fn(nlp: Nlp, v, tol: float | None = None) -> LagrangeValue:
    """φ_ℓ(v); ``-inf`` (with a ray when one exists) off the effective domain."""
    tol = settings.tol if tol is None else tol
    _require_inequality_form(nlp, "the Lagrange value function")
    v = _multiplier(v, nlp.n_ineq)
    if np.any(v < -tol):
        return LagrangeValue(value=-math.inf)
    lag = _lagrangian_at(nlp, v)
    form = quadratic_form(lag, nlp.space)
    if form is None:
        raise CapabilityError("φ_ℓ is computed in closed form only for Lagrangians of degree <= 2 in w")
    h, g, c0 = form
    eigvals, eigvecs = np.linalg.eigh(h)
    if eigvals.size and eigvals.min() < -settings.rank_tol:
        ray = eigvecs[:, int(np.argmin(eigvals))]
        return LagrangeValue(value=-math.inf, ray=(ray / np.max(np.abs(ray))).tolist())
    w, *_ = np.linalg.lstsq(h, -g, rcond=None)
    residual = h @ w + g
    if np.linalg.norm(residual, ord=np.inf) > tol * max(1.0, np.linalg.norm(g, ord=np.inf)):
        ray = -residual
        return LagrangeValue(value=-math.inf, ray=(ray / np.max(np.abs(ray))).tolist())
    value = float(0.5 * w @ h @ w + g @ w + c0)
    return LagrangeValue(value=value, minimizer=w.tolist())


# ---------------------------------------------------------------------------
# Wolfe and Mond–Weir duals
# ---------------------------------------------------------------------------


def dual_blocks(nlp: Nlp, point_block: str | None = None, multiplier_block: str | None = None) -> tuple[str, str]:
    """Default names: (z, u) for a lower level over y, else (<w>_hat, v)."""
    block = nlp.single_block()
    if point_block is None:
        point_block = "z" if block == "y" else f"{block}_hat"
    if multiplier_block is None:
        multiplier_block = "u" if block == "y" else "v"
    return point_block, multiplier_block


def _dual_parts(nlp: Nlp, point_block: str | None, multiplier_block: str | None, require_convex: bool,
                what: str) -> tuple[VarSpace, Expr, tuple[Expr, ...], list[Expr], str, str]:
    block = _require_inequality_form(nlp, what)
    if not nlp.is_convex:
        if require_convex:
            raise InputError(f"{what} needs a program certified convex")
        logger.warning("building %s of a program that is not certified convex", what)
    pb, mb = dual_blocks(nlp, point_block, multiplier_block)
    s, t = nlp.space.dim(block), nlp.n_ineq
    space = VarSpace.of((pb, s), (mb, t))
    objective = rename(nlp.objective, {block: pb})
    constraints = tuple(rename(q, {block: pb}) for q in nlp.inequalities)
    mult = block_vars(mb, t)
    lag = add(objective, dot(mult, constraints)) if t else objective
    stationarity = tuple(derivative(lag, pb, j) for j in range(s))
    signs = [neg(u) for u in mult]
    return space, lag, stationarity, signs, pb, mb


def build_wolfe_dual(
    nlp: Nlp,
    *,
    point_block: str | None = None,
    multiplier_block: str | None = None,
    require_convex: bool = True,
) -> Nlp:
    """max 𝓛(ŵ, v̂) s.t. ∇_w 𝓛(ŵ, v̂) = 0, -v̂ <= 0."""
    space, lag, stationarity, signs, _, _ = _dual_parts(
        nlp, point_block, multiplier_block, require_convex, "the Wolfe dual",
    )
    return Nlp(space=space, objective=lag, inequalities=tuple(signs), equalities=stationarity,
               sense=Sense.MAXIMIZE)


def build_mond_weir_dual(
    nlp: Nlp,
    *,
    point_block: str | None = None,
    multiplier_block: str | None = None,
    require_convex: bool = True,
) -> Nlp:
    """max p(ŵ) s.t. ∇_w 𝓛(ŵ, v̂) = 0, -v̂ᵀq(ŵ) <= 0, -v̂ <= 0."""
    space, _, stationarity, signs, pb, mb = _dual_parts(
        nlp, point_block, multiplier_block, require_convex, "the Mond–Weir dual",
    )
    block = nlp.single_block()
    objective = rename(nlp.objective, {block: pb})
    constraints = [rename(q, {block: pb}) for q in nlp.inequalities]
    inequalities = list(signs)
    if constraints:
        inequalities.append(neg(dot(block_vars(mb, nlp.n_ineq), constraints)))
    return Nlp(space=space, objective=objective, inequalities=tuple(inequalities),
               equalities=stationarity, sense=Sense.MAXIMIZE)


def build_dual(nlp: Nlp, kind: DualKind, require_convex: bool = False) -> Nlp:
    if kind is DualKind.WOLFE:
        return build_wolfe_dual(nlp, require_convex=require_convex)
    if kind is DualKind.MOND_WEIR:
        return build_mond_weir_dual(nlp, require_convex=require_convex)
    raise InputError("the Lagrange dual has no explicit program form")


# ---------------------------------------------------------------------------
# Duality checks
# ---------------------------------------------------------------------------


def _dual_value(nlp: Nlp, dual_pt, kind: DualKind, tol: float) -> tuple[float, DualCertificate]:
    if kind is DualKind.LAGRANGE:
        if isinstance(dual_pt, Point):
            dual_pt = dual_pt.values
        v = _multiplier(dual_pt, nlp.n_ineq)
        if np.any(v < -tol):
            raise InputError(f"Lagrange dual point has negative entries {v.tolist()}")
        value = lagrange_value_fn(nlp, np.maximum(v, 0.0), tol).value
        return value, DualCertificate(multiplier=v.tolist())
    dual = build_dual(nlp, kind)
    if not isinstance(dual_pt, Point):
        dual_pt = Point(dual.space, dual_pt)
    if dual_pt.space != dual.space:
        raise InputError(f"dual point must live in {dict(dual.space.blocks)}")
    require_feasible(dual, dual_pt.values, tol, f"{kind.value} dual point")
    value = float(dual.objective.evaluate(dual.space, dual_pt.values))
    _, mb = dual_blocks(nlp)
    multiplier = dual_pt.block(mb).tolist() if dual.space.has(mb) else []
    return value, DualCertificate(point=dual_pt.as_dict(), multiplier=multiplier)


def check_weak_duality(
    nlp: Nlp,
    primal_pt: Point,
    dual_pt: Point | Sequence[float] | np.ndarray,
    kind: DualKind,
    tol: float | None = None,
) -> DualityReport:
    """Compare p(w) with the dual objective at a dual-feasible point.

    A failure on a program without a convexity certificate is reported, not raised.
    """
    tol = settings.tol if tol is None else tol
    kind = DualKind(kind)
    _require_inequality_form(nlp, "weak duality")
    if primal_pt.space != nlp.space:
        raise InputError("primal point does not match the program's space")
    require_feasible(nlp, primal_pt.values, tol, "primal point")
    primal = float(nlp.objective.evaluate(nlp.space, primal_pt.values))
    dual, certificate = _dual_value(nlp, dual_pt, kind, tol)
    gap = primal - dual
    ok = gap >= -tol
    notes = []
    if not ok:
        if nlp.is_convex:
            logger.error("weak %s duality failed on a certified-convex program (gap %.3e)", kind, gap)
        else:
            logger.warning("weak %s duality fails (gap %.6g); program is not certified convex", kind, gap)
            notes.append(f"weak {kind.value} duality fails")
    return DualityReport(
        kind=kind.value,
        primal_value=primal,
        dual_value=dual,
        gap=gap,
        weak_duality_ok=ok,
        certificate=certificate,
        convexity_certified=nlp.is_convex,
        notes=notes,
    )


def check_strong_duality(nlp: Nlp, kind: DualKind, tol: float = 1e-6) -> DualityReport:
    """Solve the primal, lift its KKT multiplier to the dual and report the gap."""
    kind = DualKind(kind)
    block = _require_inequality_form(nlp, "strong duality")
    slater = check_slater(list(nlp.inequalities), nlp.space)
    solved = solve_convex(nlp)
    if solved.status not in ("optimal", "tolerance_reached"):
        raise InputError(f"primal program is {solved.status}; strong duality needs a solution")
    w = solved.flat(nlp.space)
    v = np.maximum(np.asarray(solved.multipliers[: nlp.n_ineq]), 0.0)
    if kind is DualKind.LAGRANGE:
        dual_value = lagrange_value_fn(nlp, v).value
        certificate = DualCertificate(multiplier=v.tolist())
    else:
        dual = build_dual(nlp, kind)
        values = np.concatenate([w, v])
        dual_value = float(dual.objective.evaluate(dual.space, values))
        pb, mb = dual_blocks(nlp)
        certificate = DualCertificate(point={pb: w.tolist(), mb: v.tolist()}, multiplier=v.tolist())
    gap = solved.value - dual_value
    notes = [] if slater.verdict == "holds" else [f"Slater {slater.verdict}; strong duality not guaranteed"]
    logger.info("strong %s duality on block %s: gap %.3e", kind, block, gap)
    return DualityReport(
        kind=kind.value,
        primal_value=solved.value,
        dual_value=dual_value,
        gap=gap,
        weak_duality_ok=gap >= -tol,
        strong_duality_ok=abs(gap) <= tol,
        certificate=certificate,
        convexity_certified=nlp.is_convex,
        slater=slater,
        notes=notes,
    )


def check_saddle_point(nlp: Nlp, w_bar: Point, v_bar, tol: float | None = None) -> SaddlePointReport:
    """(w̄, v̄) is a saddle point of 𝓛 iff it is a KKT pair (convex case)."""
    tol = settings.tol if tol is None else tol
    v = _multiplier(v_bar, nlp.n_constraints)
    if np.any(v[: nlp.n_ineq] < -tol):
        raise InputError("saddle-point multipliers must be nonnegative")
    if w_bar.space != nlp.space:
        raise InputError("point does not match the program's space")
    residual = kkt_residual_values(nlp, w_bar.values, v)
    return SaddlePointReport(is_saddle=residual <= tol, residual=residual)


def converse_duality_certificate(
    nlp: Nlp,
    w_hat: Point,
    v_hat,
    kind: DualKind,
    tol: float | None = None,
    assert_regular_primal: bool = False,
) -> ConverseReport:
    """Check the matrix conditions under which a dual solution yields a primal one."""
    tol = settings.rank_tol if tol is None else tol
    kind = DualKind(kind)
    if kind is DualKind.LAGRANGE:
        return ConverseReport(kind=kind.value, verdict="not_applicable",
                              reason="converse statements cover the Wolfe and Mond–Weir duals only")
    _require_inequality_form(nlp, "converse duality")
    v = _multiplier(v_hat, nlp.n_ineq)
    dual = build_dual(nlp, kind)
    values = np.concatenate([w_hat.values, v])
    require_feasible(dual, values, max(tol, settings.tol), f"{kind.value} dual point")

    hess = hessian_full(_lagrangian_at(nlp, v), nlp.space, w_hat.values)
    report = ConverseReport(kind=kind.value, verdict="not_applicable", reason="")
    if kind is DualKind.WOLFE:
        sigma = float(np.linalg.svd(hess, compute_uv=False).min()) if hess.size else 0.0
        report.min_singular_value = sigma
        applies = sigma >= tol
        report.reason = (
            "Hessian of the Lagrangian is regular" if applies
            else f"Hessian of the Lagrangian is singular (σ_min = {sigma:.3e})"
        )
    else:
        eig = float(np.linalg.eigvalsh(hess).min()) if hess.size else 0.0
        gnorm = float(np.linalg.norm(gradient_full(nlp.objective, nlp.space, w_hat.values)))
        report.min_eigenvalue, report.gradient_norm = eig, gnorm
        if eig < tol:
            applies = False
            report.reason = f"Hessian of the Lagrangian is not positive definite (λ_min = {eig:.3e})"
        elif gnorm >= tol or assert_regular_primal:
            applies = True
            report.reason = (
                "positive definite Hessian and non-vanishing objective gradient" if gnorm >= tol
                else "positive definite Hessian and a regular primal minimizer (asserted)"
            )
        else:
            applies = False
            report.reason = "objective gradient vanishes and no regular primal minimizer is asserted"
    if not applies:
        return report
    report.verdict = "applies"
    violations = feasibility_violations(nlp, w_hat.values, settings.tol)
    report.primal_feasible = not violations
    report.kkt_residual = kkt_residual_values(nlp, w_hat.values, v)
    report.counterexample = bool(violations) or report.kkt_residual > max(tol, settings.tol)
    if report.counterexample:
        logger.warning("converse %s duality conclusion fails at the given dual point", kind)
    return report


def wolfe_surrogate_value(nlp: Nlp, primal_pt: Point, dual_pt: Point) -> float:
    """p(w) - 𝓛(ŵ, v̂); nonnegative on feasible pairs whenever weak Wolfe duality holds."""
    _require_inequality_form(nlp, "the Wolfe surrogate")
    dual = build_wolfe_dual(nlp, require_convex=False)
    if dual_pt.space != dual.space:
        raise InputError(f"dual point must live in {dict(dual.space.blocks)}")
    primal = float(nlp.objective.evaluate(nlp.space, primal_pt.values))
    return primal - float(dual.objective.evaluate(dual.space, dual_pt.values))
