"""Lower-level maps of a bilevel problem: L, φ, Ψ and Λ."""


import logging
import math

import numpy as np

from app.core.config import settings
from app.core.exceptions import InputError
from app.domain.expr import Expr, Point, VarSpace, add, block_vars, dot, substitute
from app.domain.problem import BilevelProblem, MultiplierPolyhedron, Nlp
from app.schemas.reports import SolveReport
from app.services.calculus import grad, values_at
from app.services.solver import kkt_residual_values, solve_convex

logger = logging.getLogger(__name__)

__all__ = [
    "lagrangian",
    "lower_level_nlp",
    "kkt_residual",
    "value_function",
    "solve_lower_level",
    "solution_membership",
    "multiplier_set",
]


def lagrangian(bp: BilevelProblem) -> Expr:
    """L(x, y, u) = f(x, y) + Σ u_i g_i(x, y); equals f when p = 0."""
    if bp.p == 0:
        return bp.lower_objective
    return add(bp.lower_objective, dot(block_vars("u", bp.p), bp.lower_constraints))


def _as_vector(values, size: int, what: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64)).reshape(-1)
    if arr.size != size:
        raise InputError(f"{what} has {arr.size} entries, expected {size}")
    return arr


def lower_level_nlp(bp: BilevelProblem, x) -> Nlp:
    """P(x) as a program over block y."""
    xv = _as_vector(x, bp.n, "x")
    return Nlp(
        space=VarSpace.of(("y", bp.m)),
        objective=substitute(bp.lower_objective, "x", xv),
        inequalities=tuple(substitute(g, "x", xv) for g in bp.lower_constraints),
    )


def kkt_residual(nlp: Nlp, w: Point, v) -> float:
    """max of stationarity, primal, dual and complementarity violations at (w, v)."""
    if w.space != nlp.space:
        raise InputError("point space does not match the program")
    return kkt_residual_values(nlp, w.values, np.atleast_1d(np.asarray(v, dtype=np.float64)))


def solve_lower_level(bp: BilevelProblem, x, tol: float | None = None) -> SolveReport:
    bp.require_convex_lower("the lower-level solve")
    nlp = lower_level_nlp(bp, x)
    if not nlp.is_convex:
        raise InputError(f"lower level of '{bp.name}' is not certified convex at x = {x}")
    return solve_convex(nlp, tol=tol)


def value_function(bp: BilevelProblem, x, tol: float | None = None) -> float:
    """φ(x): +inf when Γ(x) is empty, -inf when P(x) is unbounded below."""
    report = solve_lower_level(bp, x, tol)
    if report.status == "infeasible":
        return math.inf
    if report.status == "unbounded":
        return -math.inf
    return report.value


def solution_membership(bp: BilevelProblem, x, y, tol: float | None = None) -> bool:
    """y ∈ Ψ(x) iff g(x, y) <= tol and f(x, y) <= φ(x) + tol."""
    tol = settings.tol if tol is None else tol
    xv = _as_vector(x, bp.n, "x")
    yv = _as_vector(y, bp.m, "y")
    values = np.concatenate([xv, yv])
    if bp.p and np.any(values_at(bp.lower_constraints, bp.space, values) > tol):
        return False
    phi = value_function(bp, xv)
    if phi == math.inf:
        return False
    return float(bp.lower_objective.evaluate(bp.space, values)) <= phi + tol


def multiplier_set(bp: BilevelProblem, x, y, tol_act: float | None = None) -> MultiplierPolyhedron:
    """Λ(x, y) = {u >= 0 | ∇_y f + Σ u_i ∇_y g_i = 0, u_i = 0 for inactive i}."""
    tol_act = settings.tol_act if tol_act is None else tol_act
    xv = _as_vector(x, bp.n, "x")
    yv = _as_vector(y, bp.m, "y")
    pt = Point(bp.space, np.concatenate([xv, yv]))
    g_values = values_at(bp.lower_constraints, bp.space, pt.values) if bp.p else np.zeros(0)
    if np.any(g_values > tol_act):
        bad = np.flatnonzero(g_values > tol_act).tolist()
        raise InputError(f"y is infeasible for P(x): constraints {bad} violated")
    active = tuple(int(i) for i in np.flatnonzero(g_values >= -tol_act))
    a = (
        np.column_stack([grad(g, "y", pt) for g in bp.lower_constraints])
        if bp.p else np.zeros((bp.m, 0))
    )
    b = -grad(bp.lower_objective, "y", pt)
    logger.debug("Λ at x=%s y=%s: active set %s", xv.tolist(), yv.tolist(), active)
    return MultiplierPolyhedron(active_index_set=active, equality_matrix=a, rhs=b, p=bp.p)
