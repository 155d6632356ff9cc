"""Single-level reformulations of the optimistic bilevel problem.

  vf   min F  s.t. G <= 0, g <= 0, f(x,y) <= φ(x)
  kkt  min F  s.t. G <= 0, g <= 0, u >= 0, uᵀg = 0, ∇_y L = 0
  ge   (x, y) feasible iff -∇_y f ∈ N_Γ(x)(y)           (feasibility test only)
  ld   min F  s.t. G <= 0, g <= 0, u >= 0, f(x,y) <= ψ_ℓ(x,u)
  wd   min F  s.t. G <= 0, g <= 0, u >= 0, f(x,y) <= L(x,z,u), ∇_y L(x,z,u) = 0
  mwd  min F  s.t. G <= 0, g <= 0, u >= 0, f(x,y) <= f(x,z), uᵀg(x,z) >= 0, ∇_y L(x,z,u) = 0

Value functions without an algebraic form become callable constraints.
"""


import logging
import math
from collections.abc import Callable
from types import MappingProxyType

import numpy as np

from app.core.config import settings
from app.core.exceptions import CapabilityError, InputError
from app.domain.expr import (
    ZERO,
    Const,
    Expr,
    Point,
    VarSpace,
    add,
    block_vars,
    blocks_of,
    const,
    derivative,
    dot,
    is_affine,
    is_const,
    monomial_degree,
    mul,
    neg,
    polynomial_terms,
    rename,
    sub,
    substitute_exprs,
)
from app.domain.problem import (
    BilevelProblem,
    ConstraintRole,
    Dims,
    ImplicitConstraint,
    LagrangeClosedForm,
    Nlp,
    Polyhedron,
    Provenance,
    ReformKind,
    ReformulatedNlp,
)
from app.schemas.reports import CountSummary, GeReport, QualitativeRow
from app.services.calculus import grad, values_at
from app.services.cq import check_gcq_polyhedral
from app.services.duality import lagrange_value_fn
from app.services.lower_level import lagrangian, lower_level_nlp, value_function
from app.services.lp import solve_lp
from app.services.polyhedra import enumerate_vertices
from app.services.solver import solve_convex

logger = logging.getLogger(__name__)

__all__ = [
    "lagrange_closed_form",
    "build_vf_ref",
    "build_kkt_ref",
    "build_ld_ref",
    "build_wd_ref",
    "build_mwd_ref",
    "build_reformulation",
    "ge_ref_feasibility",
    "count_summary",
    "qualitative_rows",
]

_ORIGINAL = {"x": Provenance.ORIGINAL, "y": Provenance.ORIGINAL}


# ---------------------------------------------------------------------------
# Structure of the lower level
# ---------------------------------------------------------------------------


def _y_terms(e: Expr, m: int) -> tuple[Expr, list[Expr], dict]:
    terms = polynomial_terms(e, ["y"])
    constant = terms.get((), ZERO)
    linear = [terms.get((("y", j, 1),), ZERO) for j in range(m)]
    return constant, linear, terms


def _quadratic_minimizer(terms: dict, linear: list[Expr], m: int) -> list[Expr] | None:
    """y*(·) = -Q⁻¹b(·) when the y-quadratic part is constant and positive definite."""
    if any(monomial_degree(mono) > 2 for mono in terms):
        return None
    q = np.zeros((m, m))
    for mono, coef in terms.items():
        if monomial_degree(mono) != 2:
            continue
        if not isinstance(coef, Const):
            return None
        if len(mono) == 1:
            _, j, _ = mono[0]
            q[j, j] += 2.0 * coef.value
        else:
            (_, i, _), (_, j, _) = mono
            q[i, j] += coef.value
            q[j, i] += coef.value
    if np.linalg.eigvalsh(q).min() <= settings.rank_tol:
        return None
    inv = np.linalg.inv(q)
    return [add(*(mul(const(-inv[i, j]), linear[j]) for j in range(m))) for i in range(m)]


def lagrange_closed_form(bp: BilevelProblem) -> LagrangeClosedForm | None:
    """ψ_ℓ(x, u) = inf_y L(x, y, u) as an expression plus its domain equalities.

    Affine in y: ψ_ℓ is the y-free part of L on {coefficients of y = 0}.
    Strictly convex quadratic in y (constant Hessian): ψ_ℓ = L(x, y*(x,u), u).
    """
    lag = lagrangian(bp)
    constant, linear, terms = _y_terms(lag, bp.m)
    degree = max((monomial_degree(mono) for mono in terms), default=0)
    if degree <= 1:
        domain = tuple(c for c in linear if not is_const(c, 0.0))
        polyhedral = all(is_affine(c, ["x", "u"]) for c in domain)
        return LagrangeClosedForm(psi=constant, domain=domain, polyhedral=polyhedral)
    minimizer = _quadratic_minimizer(terms, linear, bp.m)
    if minimizer is None:
        return None
    return LagrangeClosedForm(psi=substitute_exprs(lag, "y", minimizer), domain=(), polyhedral=True)


def _rows(space: VarSpace, batch: np.ndarray, block: str) -> np.ndarray:
    return batch[:, space.slice(block)] if space.has(block) else np.zeros((batch.shape[0], 0))


def _cached_rows(keys: np.ndarray, compute: Callable[[np.ndarray], float], cache: dict) -> np.ndarray:
    if keys.shape[0] == 0:
        return np.zeros(0)
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    out = np.empty(unique.shape[0])
    for i, row in enumerate(unique):
        key = row.tobytes()
        if key not in cache:
            cache[key] = compute(row)
        out[i] = cache[key]
    return out[np.asarray(inverse).reshape(-1)]


def _implicit(name: str, evaluator, description: str) -> ImplicitConstraint:
    return ImplicitConstraint(
        name=name, evaluator=evaluator, description=description,
        budget=int(settings.implicit_budget), lipschitz_unreliable=True,
    )


def _finite_residual(values: np.ndarray) -> np.ndarray:
    """±inf residuals (φ = ±inf) both mean infeasible."""
    return np.where(np.isnan(values) | np.isinf(values), math.inf, values)


# ---------------------------------------------------------------------------
# Value function φ
# ---------------------------------------------------------------------------


def _remark_form(bp: BilevelProblem) -> tuple[Expr, np.ndarray, np.ndarray, list[Expr]] | None:
    """f = f1(x) + cᵀy, g = A y - b(x) with constant c and A."""
    if not bp.lower_affine_in_y:
        return None
    f1, c_exprs, _ = _y_terms(bp.lower_objective, bp.m)
    if not all(isinstance(c, Const) for c in c_exprs):
        return None
    a = np.zeros((bp.p, bp.m))
    b_exprs = []
    for i, g in enumerate(bp.lower_constraints):
        g0, coefs, _ = _y_terms(g, bp.m)
        if not all(isinstance(c, Const) for c in coefs):
            return None
        a[i] = [c.value for c in coefs]
        b_exprs.append(neg(g0))
    c = np.array([e.value for e in c_exprs])
    return f1, c, a, b_exprs


def _phi_closed_form(bp: BilevelProblem) -> tuple[Expr | None, str]:
    if bp.p == 0 and "y" not in blocks_of(bp.lower_objective):
        return bp.lower_objective, "φ = f (lower level independent of y)"
    if bp.p == 0:
        constant, linear, terms = _y_terms(bp.lower_objective, bp.m)
        minimizer = _quadratic_minimizer(terms, linear, bp.m)
        if minimizer is not None:
            return substitute_exprs(bp.lower_objective, "y", minimizer), "φ = f(x, y*(x)) (strictly convex quadratic)"
        return None, "unconstrained lower level without closed form"
    remark = _remark_form(bp)
    if remark is None:
        return None, "lower level not affine in y with constant coefficients"
    f1, c, a, b_exprs = remark
    dual = Polyhedron(eq_matrix=a.T, eq_rhs=-c, ineq_matrix=-np.eye(bp.p), ineq_rhs=np.zeros(bp.p),
                      labels=tuple(f"u[{i}]" for i in range(bp.p)))
    try:
        enum = enumerate_vertices(dual)
    except CapabilityError:
        return None, "dual polyhedron too large to enumerate"
    if len(enum.vertices) == 1 and enum.bounded:
        v = enum.vertices[0]
        phi = add(f1, *(mul(const(-v[i]), b_exprs[i]) for i in range(bp.p) if v[i] != 0.0))
        return phi, "φ = f1(x) - b(x)ᵀū (single dual vertex)"
    return None, "dual polyhedron has several vertices"


def _phi_evaluator(bp: BilevelProblem, space: VarSpace) -> tuple[Callable[[np.ndarray], np.ndarray], str]:
    """Vectorised f(x, y) - φ(x)."""
    xy_space = bp.space
    remark = _remark_form(bp) if bp.p else None
    enum = None
    if remark is not None:
        f1, c, a, b_exprs = remark
        dual = Polyhedron(eq_matrix=a.T, eq_rhs=-c, ineq_matrix=-np.eye(bp.p), ineq_rhs=np.zeros(bp.p),
                          labels=tuple(f"u[{i}]" for i in range(bp.p)))
        try:
            enum = enumerate_vertices(dual)
        except CapabilityError:
            enum = None
    cache: dict[bytes, float] = {}

    def per_x(x_row: np.ndarray) -> float:
        if not bp.lower_convex_in_y:
            raise CapabilityError("φ cannot be evaluated: lower level is not certified convex in y")
        return value_function(bp, x_row)

    def evaluate(batch: np.ndarray) -> np.ndarray:
        xs = _rows(space, batch, "x")
        xy = np.hstack([xs, _rows(space, batch, "y")])
        f_vals = np.asarray(bp.lower_objective.evaluate(xy_space, xy), dtype=np.float64)
        if enum is not None and not enum.empty and not enum.lineality:
            x_only = VarSpace.of(("x", bp.n))
            f1_vals = np.asarray(f1.evaluate(x_only, xs), dtype=np.float64) * np.ones(xs.shape[0])
            b_vals = np.column_stack([np.asarray(b.evaluate(x_only, xs)) * np.ones(xs.shape[0]) for b in b_exprs])
            phi = f1_vals + np.max(-b_vals @ np.array(enum.vertices).T, axis=1)
            for ray in enum.rays:
                phi = np.where(-b_vals @ ray > settings.tol, math.inf, phi)
        else:
            phi = _cached_rows(xs, per_x, cache)
        return _finite_residual(f_vals - phi)

    how = "dual-vertex maximum" if enum is not None else "lower-level solve per x"
    return evaluate, how


def build_vf_ref(bp: BilevelProblem) -> ReformulatedNlp:
    space = bp.space
    inequalities = [*bp.upper_constraints, *bp.lower_constraints]
    roles = [ConstraintRole.UPPER] * bp.q + [ConstraintRole.LOWER] * bp.p
    phi, how = _phi_closed_form(bp)
    implicit: tuple[ImplicitConstraint, ...] = ()
    notes = [how]
    if phi is not None:
        inequalities.append(sub(bp.lower_objective, phi))
        roles.append(ConstraintRole.VALUE)
    else:
        evaluator, method = _phi_evaluator(bp, space)
        implicit = (_implicit("value_function", evaluator, f"f(x, y) - φ(x) <= 0 via {method}"),)
        notes.append(f"value constraint is callable ({method})")
    logger.info("built vf reformulation of '%s' (%s)", bp.name, "algebraic" if phi is not None else "callable")
    return ReformulatedNlp(
        kind=ReformKind.VF,
        nlp=Nlp(space=space, objective=bp.upper_objective, inequalities=tuple(inequalities)),
        source=bp,
        provenance=MappingProxyType(dict(_ORIGINAL)),
        inequality_roles=tuple(roles),
        equality_roles=(),
        implicit_constraints=implicit,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# KKT
# ---------------------------------------------------------------------------


def _base_rows(bp: BilevelProblem) -> tuple[list[Expr], list[ConstraintRole]]:
    rows = [*bp.upper_constraints, *bp.lower_constraints, *(neg(u) for u in block_vars("u", bp.p))]
    roles = [ConstraintRole.UPPER] * bp.q + [ConstraintRole.LOWER] * bp.p + [ConstraintRole.SIGN] * bp.p
    return rows, roles


def _provenance(space: VarSpace, *implicit_blocks: str) -> MappingProxyType:
    prov = dict(_ORIGINAL)
    prov.update({b: Provenance.IMPLICIT for b in implicit_blocks if space.has(b)})
    return MappingProxyType(prov)


def build_kkt_ref(bp: BilevelProblem, per_component: bool = False) -> ReformulatedNlp:
    """Complementarity is the single row uᵀg = 0 unless ``per_component``."""
    bp.require_convex_lower("the KKT reformulation")
    space = bp.lagrangian_space
    inequalities, roles = _base_rows(bp)
    lag = lagrangian(bp)
    mult = block_vars("u", bp.p)
    equalities: list[Expr] = []
    eq_roles: list[ConstraintRole] = []
    if bp.p:
        if per_component:
            equalities += [mul(u, g) for u, g in zip(mult, bp.lower_constraints, strict=True)]
            eq_roles += [ConstraintRole.COMPLEMENTARITY] * bp.p
        else:
            equalities.append(dot(mult, bp.lower_constraints))
            eq_roles.append(ConstraintRole.COMPLEMENTARITY)
    equalities += [derivative(lag, "y", j) for j in range(bp.m)]
    eq_roles += [ConstraintRole.STATIONARITY] * bp.m
    notes = ["per-component complementarity"] if per_component else []
    return ReformulatedNlp(
        kind=ReformKind.KKT,
        nlp=Nlp(space=space, objective=bp.upper_objective, inequalities=tuple(inequalities),
                equalities=tuple(equalities)),
        source=bp,
        provenance=_provenance(space, "u"),
        inequality_roles=tuple(roles),
        equality_roles=tuple(eq_roles),
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# Lagrange dual
# ---------------------------------------------------------------------------


def _psi_evaluator(bp: BilevelProblem, space: VarSpace) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorised f(x, y) - ψ_ℓ(x, u) with ψ_ℓ computed per distinct (x, u)."""
    cache: dict[bytes, float] = {}
    lag = lagrangian(bp)
    y_space = VarSpace.of(("y", bp.m))

    def psi(row: np.ndarray) -> float:
        x, u = row[: bp.n], row[bp.n:]
        if np.any(u < -settings.tol):
            return -math.inf
        nlp = lower_level_nlp(bp, x)
        try:
            return lagrange_value_fn(nlp, u).value
        except CapabilityError:
            inner = Nlp(space=y_space, objective=substitute_exprs(
                substitute_exprs(lag, "x", [const(v) for v in x]), "u", [const(v) for v in u]))
            if not inner.is_convex:
                raise
            report = solve_convex(inner)
            return -math.inf if report.status == "unbounded" else report.value

    def evaluate(batch: np.ndarray) -> np.ndarray:
        xs, ys, us = _rows(space, batch, "x"), _rows(space, batch, "y"), _rows(space, batch, "u")
        f_vals = np.asarray(bp.lower_objective.evaluate(bp.space, np.hstack([xs, ys])), dtype=np.float64)
        return _finite_residual(f_vals - _cached_rows(np.hstack([xs, us]), psi, cache))

    return evaluate


def build_ld_ref(bp: BilevelProblem) -> ReformulatedNlp:
    bp.require_convex_lower("the Lagrange-dual reformulation")
    space = bp.lagrangian_space
    inequalities, roles = _base_rows(bp)
    closed = lagrange_closed_form(bp)
    equalities: list[Expr] = []
    implicit: tuple[ImplicitConstraint, ...] = ()
    notes = []
    if closed is not None:
        inequalities.append(sub(bp.lower_objective, closed.psi))
        roles.append(ConstraintRole.VALUE)
        equalities = list(closed.domain)
        notes.append("ψ_ℓ in closed form" + ("" if closed.domain else " on u >= 0"))
    else:
        implicit = (_implicit("lagrange_value", _psi_evaluator(bp, space),
                              "f(x, y) - ψ_ℓ(x, u) <= 0 with ψ_ℓ = inf_y L(x, y, u)"),)
        notes.append("ψ_ℓ has no finite description; value constraint is callable")
    return ReformulatedNlp(
        kind=ReformKind.LD,
        nlp=Nlp(space=space, objective=bp.upper_objective, inequalities=tuple(inequalities),
                equalities=tuple(equalities)),
        source=bp,
        provenance=_provenance(space, "u"),
        inequality_roles=tuple(roles),
        equality_roles=(ConstraintRole.VALUE_DOMAIN,) * len(equalities),
        implicit_constraints=implicit,
        closed_form=closed,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# Wolfe and Mond–Weir duals
# ---------------------------------------------------------------------------


def _dual_space(bp: BilevelProblem) -> VarSpace:
    return VarSpace.of(("x", bp.n), ("y", bp.m), ("z", bp.m), ("u", bp.p))


def build_wd_ref(bp: BilevelProblem) -> ReformulatedNlp:
    """z is eliminated whenever L is affine in y (the dual constraint no longer depends on z)."""
    bp.require_convex_lower("the Wolfe-dual reformulation")
    space = _dual_space(bp)
    inequalities, roles = _base_rows(bp)
    lag = lagrangian(bp)
    constant, linear, terms = _y_terms(lag, bp.m)
    notes = []
    if max((monomial_degree(mono) for mono in terms), default=0) <= 1:
        inequalities.append(sub(bp.lower_objective, constant))
        stationarity = list(linear)
        notes.append("z eliminated: the Lagrangian is affine in y, so the dual constraints do not depend on z")
    else:
        lag_z = rename(lag, {"y": "z"})
        inequalities.append(sub(bp.lower_objective, lag_z))
        stationarity = [derivative(lag_z, "z", j) for j in range(bp.m)]
    roles.append(ConstraintRole.VALUE)
    return ReformulatedNlp(
        kind=ReformKind.WD,
        nlp=Nlp(space=space, objective=bp.upper_objective, inequalities=tuple(inequalities),
                equalities=tuple(stationarity)),
        source=bp,
        provenance=_provenance(space, "z", "u"),
        inequality_roles=tuple(roles),
        equality_roles=(ConstraintRole.STATIONARITY,) * bp.m,
        notes=tuple(notes),
    )


def build_mwd_ref(bp: BilevelProblem) -> ReformulatedNlp:
    bp.require_convex_lower("the Mond–Weir-dual reformulation")
    space = _dual_space(bp)
    inequalities, roles = _base_rows(bp)
    lag_z = rename(lagrangian(bp), {"y": "z"})
    f_z = rename(bp.lower_objective, {"y": "z"})
    inequalities.append(sub(bp.lower_objective, f_z))
    roles.append(ConstraintRole.VALUE)
    if bp.p:
        g_z = [rename(g, {"y": "z"}) for g in bp.lower_constraints]
        inequalities.append(neg(dot(block_vars("u", bp.p), g_z)))
        roles.append(ConstraintRole.DUAL_VALUE)
    stationarity = [derivative(lag_z, "z", j) for j in range(bp.m)]
    return ReformulatedNlp(
        kind=ReformKind.MWD,
        nlp=Nlp(space=space, objective=bp.upper_objective, inequalities=tuple(inequalities),
                equalities=tuple(stationarity)),
        source=bp,
        provenance=_provenance(space, "z", "u"),
        inequality_roles=tuple(roles),
        equality_roles=(ConstraintRole.STATIONARITY,) * bp.m,
    )


_BUILDERS: dict[ReformKind, Callable[[BilevelProblem], ReformulatedNlp]] = {
    ReformKind.VF: build_vf_ref,
    ReformKind.KKT: build_kkt_ref,
    ReformKind.LD: build_ld_ref,
    ReformKind.WD: build_wd_ref,
    ReformKind.MWD: build_mwd_ref,
}


def build_reformulation(bp: BilevelProblem, kind: ReformKind | str) -> ReformulatedNlp:
    kind = ReformKind(kind)
    if kind is ReformKind.GE:
        raise CapabilityError(
            "the generalized-equation reformulation is a feasibility test only; no program is emitted"
        )
    return _BUILDERS[kind](bp)


# ---------------------------------------------------------------------------
# Generalized equation
# ---------------------------------------------------------------------------


def ge_ref_feasibility(bp: BilevelProblem, x, y, tol: float | None = None) -> GeReport:
    """-∇_y f(x, y) ∈ cone{∇_y g_i(x, y) | i active}, decided by an L1-residual LP."""
    tol = settings.tol if tol is None else tol
    xv = np.atleast_1d(np.asarray(x, dtype=np.float64))
    yv = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if xv.size != bp.n or yv.size != bp.m:
        raise InputError(f"expected x in R^{bp.n} and y in R^{bp.m}")
    if bp.q and np.any(values_at(bp.upper_constraints, bp.upper_space, xv) > tol):
        raise InputError("x violates the upper-level constraints G(x) <= 0")
    pt = Point(bp.space, np.concatenate([xv, yv]))
    g_vals = values_at(bp.lower_constraints, bp.space, pt.values) if bp.p else np.zeros(0)
    if np.any(g_vals > tol):
        raise InputError(f"y is infeasible for P(x): constraints {np.flatnonzero(g_vals > tol).tolist()}")
    active = [int(i) for i in np.flatnonzero(g_vals >= -settings.tol_act)]
    target = -grad(bp.lower_objective, "y", pt)
    a = np.column_stack([grad(bp.lower_constraints[i], "y", pt) for i in active]) \
        if active else np.zeros((bp.m, 0))
    k = len(active)
    # variables: u_active >= 0, r⁺ >= 0, r⁻ >= 0; a u + r⁺ - r⁻ = target
    c = np.concatenate([np.zeros(k), np.ones(2 * bp.m)])
    a_eq = np.hstack([a, np.eye(bp.m), -np.eye(bp.m)])
    res = solve_lp(c, a_eq=a_eq, b_eq=target, bounds=[(0.0, None)] * (k + 2 * bp.m))
    if not res.ok or res.x is None:
        raise InputError(f"GE membership LP failed with status {res.status}")
    multiplier = np.zeros(bp.p)
    multiplier[active] = res.x[:k]
    residual = float(np.abs(a @ res.x[:k] - target).max(initial=0.0))
    gcq = check_gcq_polyhedral(lower_level_nlp(bp, xv))
    feasible = residual <= tol
    return GeReport(
        feasible=feasible,
        multiplier=multiplier.tolist() if feasible else None,
        residual=residual,
        active_set=active,
        gcq=gcq,
    )


# ---------------------------------------------------------------------------
# Comparison tables
# ---------------------------------------------------------------------------


def _dims(source: BilevelProblem | Dims | tuple[int, int, int, int]) -> Dims:
    if isinstance(source, BilevelProblem):
        return source.dims
    return Dims(*source)


def count_summary(source: BilevelProblem | Dims | tuple[int, int, int, int],
                  kind: ReformKind | str) -> CountSummary:
    """(variables, implicit variables, constraints) of a reformulation.

    Counting rule, shared with ``ReformulatedNlp.constraint_count``: every
    emitted row and callable constraint counts except ``value_domain`` rows.
    Rows built from the product uᵀg(·) exist only when p >= 1, so for
    p = 0 the kkt complementarity row and the mwd dual-value row are not
    emitted and not counted.
    """
    n, m, p, q = _dims(source)
    kind = ReformKind(kind)
    has_products = 1 if p else 0
    formulas = {
        ReformKind.VF: (n + m, 0, p + q + 1),
        ReformKind.KKT: (n + m + p, p, m + 2 * p + q + has_products),
        ReformKind.GE: (n + m, 0, m + q),
        ReformKind.LD: (n + m + p, p, 2 * p + q + 1),
        ReformKind.WD: (n + 2 * m + p, m + p, m + 2 * p + q + 1),
        ReformKind.MWD: (n + 2 * m + p, m + p, m + 2 * p + q + 1 + has_products),
    }
    n_vars, n_implicit, n_constraints = formulas[kind]
    return CountSummary(kind=kind.value, n_vars=n_vars, n_implicit_vars=n_implicit,
                        n_constraints=n_constraints)


STANDARD_KINDS = (ReformKind.VF, ReformKind.KKT, ReformKind.GE)
DUAL_KINDS = (ReformKind.LD, ReformKind.WD, ReformKind.MWD)

_QUALITATIVE = {
    "lower-level convexity": {"vf": "×", "kkt": "✓", "ge": "✓", "ld": "✓", "wd": "✓", "mwd": "✓"},
    "lower-level differentiability": {"vf": "×", "kkt": "✓", "ge": "(✓)", "ld": "✓", "wd": "✓", "mwd": "✓"},
    "lower-level regularity": {"vf": "×", "kkt": "✓", "ge": "×", "ld": "✓", "wd": "✓", "mwd": "✓"},
    "global equivalence": {"vf": "✓", "kkt": "✓", "ge": "✓", "ld": "✓", "wd": "✓", "mwd": "✓"},
    "local equivalence": {"vf": "✓", "kkt": "(×)", "ge": "✓", "ld": "(×)", "wd": "(×)", "mwd": "(×)"},
    "validity of MFCQ": {"vf": "×", "kkt": "×", "ge": "−", "ld": "(×)", "wd": "×", "mwd": "×"},
}


def qualitative_rows(kinds: tuple[ReformKind, ...]) -> list[QualitativeRow]:
    return [
        QualitativeRow(label=label, entries={k.value: entries[k.value] for k in kinds})
        for label, entries in _QUALITATIVE.items()
    ]
