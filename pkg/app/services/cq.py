"""Constraint-qualification verdicts.

Every verdict is decided by small LPs (HiGHS) and carries a certificate:
a direction when a qualification holds, a nontrivial multiplier or cone
element when it is violated.
"""


import logging

import numpy as np
from scipy.linalg import null_space

from app.core.config import settings
from app.core.exceptions import CapabilityError, InputError
from app.domain.expr import Expr, Point, VarSpace, certify_convex, is_affine, neg, sub, substitute, var
from app.domain.problem import BilevelProblem, ConstraintRole, Nlp, ReformulatedNlp
from app.schemas.reports import CqCertificate, CqReport
from app.services.calculus import gradient_full, jacobian, values_at
from app.services.lp import solve_lp
from app.services.polyhedra import polyhedral_normal_cone
from app.services.solver import solve_convex

logger = logging.getLogger(__name__)

__all__ = [
    "check_mfcq",
    "check_slater",
    "check_lower_slater",
    "check_gcq_polyhedral",
    "polyhedral_normal_cone",
    "check_bcq_closed_form",
    "check_nsmfcq_ld",
]


def _tolerances(**values: float) -> dict[str, float]:
    return {k: float(v) for k, v in values.items()}


def _labels(target: Nlp | ReformulatedNlp) -> tuple[list[str], list[str]]:
    if isinstance(target, ReformulatedNlp):
        ineq = [f"{role.value}[{i}]" for i, role in enumerate(target.inequality_roles)]
        eq = [f"{role.value}[{i}]" for i, role in enumerate(target.equality_roles)]
        return ineq, eq
    return [f"ineq[{i}]" for i in range(target.n_ineq)], [f"eq[{i}]" for i in range(target.n_eq)]


def _unwrap(target: Nlp | ReformulatedNlp, what: str) -> Nlp:
    if isinstance(target, ReformulatedNlp):
        if target.implicit_constraints:
            raise CapabilityError(
                f"{what} needs gradients; the {target.kind.value} reformulation carries callable "
                "constraints"
            )
        return target.nlp
    return target


def _feasible_or_raise(nlp: Nlp, values: np.ndarray, tol_act: float) -> tuple[np.ndarray, np.ndarray]:
    q = values_at(nlp.inequalities, nlp.space, values) if nlp.n_ineq else np.zeros(0)
    h = values_at(nlp.equalities, nlp.space, values) if nlp.n_eq else np.zeros(0)
    bad = [f"inequality {i}" for i in np.flatnonzero(q > tol_act)]
    bad += [f"equality {i}" for i in np.flatnonzero(np.abs(h) > tol_act)]
    if bad:
        raise InputError("point is infeasible: " + ", ".join(bad))
    return q, h


# ---------------------------------------------------------------------------
# MFCQ
# ---------------------------------------------------------------------------


def _mfcq_primal(j_act: np.ndarray, j_eq: np.ndarray, dim: int) -> tuple[float, np.ndarray]:
    """max σ s.t. J_I d + σ <= 0, J_E d = 0, ‖d‖∞ <= 1, σ <= 1."""
    c = np.zeros(dim + 1)
    c[-1] = -1.0
    a_ub = np.hstack([j_act, np.ones((j_act.shape[0], 1))]) if j_act.shape[0] else None
    a_eq = np.hstack([j_eq, np.zeros((j_eq.shape[0], 1))]) if j_eq.shape[0] else None
    res = solve_lp(
        c,
        a_ub=a_ub, b_ub=None if a_ub is None else np.zeros(j_act.shape[0]),
        a_eq=a_eq, b_eq=None if a_eq is None else np.zeros(j_eq.shape[0]),
        bounds=[(-1.0, 1.0)] * dim + [(None, 1.0)],
    )
    if not res.ok or res.x is None:
        raise InputError(f"MFCQ direction LP failed with status {res.status}")
    return float(res.x[-1]), res.x[:-1]


def _mfcq_dual(j_act: np.ndarray, j_eq: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray] | None:
    """λ >= 0, Σλ = 1, J_Iᵀλ + J_Eᵀμ = 0; None when infeasible."""
    k, e = j_act.shape[0], j_eq.shape[0]
    if k == 0:
        return None
    a_eq = np.vstack([
        np.hstack([j_act.T, j_eq.T]) if e else j_act.T,
        np.concatenate([np.ones(k), np.zeros(e)])[None, :],
    ])
    b_eq = np.concatenate([np.zeros(j_act.shape[1]), [1.0]])
    res = solve_lp(np.zeros(k + e), a_eq=a_eq, b_eq=b_eq, bounds=[(0.0, None)] * k + [(None, None)] * e)
    if not res.ok or res.x is None:
        return None
    lam, mu = res.x[:k], res.x[k:]
    residual = np.abs(j_act.T @ lam + (j_eq.T @ mu if e else 0.0)).max(initial=0.0)
    if residual > 1e-12:
        # refit on the support for a sharper certificate
        support = lam > 1e-12
        mat = np.vstack([
            np.hstack([j_act[support].T, j_eq.T]) if e else j_act[support].T,
            np.concatenate([np.ones(int(support.sum())), np.zeros(e)])[None, :],
        ])
        sol, *_ = np.linalg.lstsq(mat, b_eq, rcond=None)
        refined = np.zeros(k)
        refined[support] = sol[: int(support.sum())]
        if np.all(refined >= 0.0):
            lam, mu = refined, sol[int(support.sum()):]
    return lam, mu


def check_mfcq(
    target: Nlp | ReformulatedNlp,
    w: Point,
    tol_act: float | None = None,
    tol: float | None = None,
) -> CqReport:
    """MFCQ at ``w`` via the direction LP, cross-checked against the multiplier LP."""
    tol_act = settings.tol_act if tol_act is None else tol_act
    tol = settings.rank_tol if tol is None else tol
    nlp = _unwrap(target, "MFCQ")
    if w.space != nlp.space:
        raise InputError("point does not match the program's space")
    q, _ = _feasible_or_raise(nlp, w.values, tol_act)
    active = [int(i) for i in np.flatnonzero(q >= -tol_act)]
    dim = nlp.space.total_dim
    j_act = jacobian([nlp.inequalities[i] for i in active], nlp.space, w.values) \
        if active else np.zeros((0, dim))
    j_eq = jacobian(nlp.equalities, nlp.space, w.values) if nlp.n_eq else np.zeros((0, dim))

    sigma, direction = _mfcq_primal(j_act, j_eq, dim)
    sv = np.linalg.svd(j_eq, compute_uv=False) if j_eq.shape[0] else np.zeros(0)
    full_rank = j_eq.shape[0] == 0 or (j_eq.shape[0] <= dim and sv.min() >= tol)
    holds = sigma >= tol and full_rank

    dual = _mfcq_dual(j_act, j_eq, tol)
    if dual is None and not full_rank:
        basis = null_space(j_eq.T, rcond=tol)
        dual = (np.zeros(len(active)), basis[:, 0] / np.max(np.abs(basis[:, 0])))
    dual_consistent = holds == (dual is None)
    if not dual_consistent:
        logger.warning("MFCQ primal (σ=%.3e, full rank=%s) and multiplier LPs disagree", sigma, full_rank)

    ineq_labels, eq_labels = _labels(target)
    tolerances = _tolerances(tolAct=tol_act, rankTol=tol, lpTol=settings.lp_tol)
    if holds:
        return CqReport(
            condition="mfcq", verdict="holds", active_set=active, tolerances=tolerances,
            certificate=CqCertificate(kind="direction", values=direction.tolist(),
                                      labels=nlp.space.labels(), sigma=sigma),
            dual_consistent=dual_consistent,
        )
    certificate = None
    residual = None
    if dual is not None:
        lam, mu = dual
        full = np.zeros(nlp.n_ineq)
        full[active] = lam
        values = np.concatenate([full, mu])
        residual = float(np.abs(j_act.T @ lam + (j_eq.T @ mu if j_eq.shape[0] else 0.0)).max(initial=0.0))
        certificate = CqCertificate(kind="multiplier", values=values.tolist(),
                                    labels=ineq_labels + eq_labels, sigma=sigma)
    notes = [] if full_rank else ["equality gradients are linearly dependent"]
    return CqReport(
        condition="mfcq", verdict="violated", active_set=active, tolerances=tolerances,
        certificate=certificate, residual=residual, dual_consistent=dual_consistent, notes=notes,
    )


# ---------------------------------------------------------------------------
# Slater and GCQ
# ---------------------------------------------------------------------------


def check_slater(constraints: list[Expr], space: VarSpace, tol: float | None = None) -> CqReport:
    """Strict feasibility of convex constraints via min s s.t. q_i - s <= 0, -1 - s <= 0."""
    tol = settings.tol if tol is None else tol
    tolerances = _tolerances(tol=tol)
    if not constraints:
        return CqReport(condition="slater", verdict="holds", tolerances=tolerances,
                        notes=["no constraints; holds vacuously"])
    if not all(certify_convex(e, space.names, space) for e in constraints):
        return CqReport(condition="slater", verdict="not_applicable", tolerances=tolerances,
                        notes=["constraints are not certified convex"])
    ext = space.extend(("slack_", 1))
    s = var("slack_", 0)
    nlp = Nlp(space=ext, objective=s,
              inequalities=tuple(sub(e, s) for e in constraints) + (neg(s) - 1.0,))
    report = solve_convex(nlp)
    if report.status not in ("optimal", "tolerance_reached"):
        raise InputError(f"Slater auxiliary problem is {report.status}")
    values = report.flat(ext)
    s_star = float(values[-1])
    if s_star < -tol:
        return CqReport(
            condition="slater", verdict="holds", tolerances=tolerances, residual=s_star,
            certificate=CqCertificate(kind="point", values=values[:-1].tolist(), labels=space.labels()),
        )
    multipliers = report.multipliers[: len(constraints)]
    return CqReport(
        condition="slater", verdict="violated", tolerances=tolerances, residual=s_star,
        certificate=CqCertificate(kind="multiplier", values=multipliers,
                                  labels=[f"ineq[{i}]" for i in range(len(constraints))]),
    )


def check_lower_slater(bp: BilevelProblem, x, tol: float | None = None) -> CqReport:
    """Slater for g(x, ·) <= 0 at fixed x."""
    xv = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if xv.size != bp.n:
        raise InputError(f"x has {xv.size} entries, expected {bp.n}")
    space = VarSpace.of(("y", bp.m))
    return check_slater([substitute(g, "x", xv) for g in bp.lower_constraints], space, tol)


def check_gcq_polyhedral(nlp: Nlp, w: Point | None = None) -> CqReport:
    """Holds for affine constraint systems; undecided otherwise."""
    constraints = (*nlp.inequalities, *nlp.equalities)
    if all(is_affine(c, nlp.space.names) for c in constraints):
        notes = ["no constraints"] if not constraints else ["all constraints affine"]
        return CqReport(condition="gcq_polyhedral", verdict="holds", notes=notes)
    return CqReport(condition="gcq_polyhedral", verdict="not_applicable",
                    notes=["non-affine constraints; GCQ not decidable here"])


# ---------------------------------------------------------------------------
# Closed-form Lagrange-dual reformulation: BCQ and NSMFCQ
# ---------------------------------------------------------------------------


def _ld_feasible_point(ldref: ReformulatedNlp, pt: Point) -> np.ndarray:
    if pt.space != ldref.space:
        raise InputError(f"point must live in {dict(ldref.space.blocks)}")
    _feasible_or_raise(ldref.nlp, pt.values, settings.tol_act)
    return pt.values


def _omega_cone(ldref: ReformulatedNlp, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """N_Ω at the point: generators -e_{u_i} for u_i = 0, lineality the domain gradients."""
    space = ldref.space
    dim = space.total_dim
    gens = []
    if space.has("u"):
        for i in range(space.dim("u")):
            idx = space.index("u", i)
            if abs(values[idx]) <= settings.tol_act:
                row = np.zeros(dim)
                row[idx] = -1.0
                gens.append(row)
    domain = ldref.closed_form.domain if ldref.closed_form else ()
    lin = [gradient_full(d, space, values) for d in domain]
    lin = [row for row in lin if np.any(np.abs(row) > 0.0)]
    return (np.array(gens).reshape(-1, dim), np.array(lin).reshape(-1, dim))


def _feasible_set_cone(ldref: ReformulatedNlp, values: np.ndarray) -> np.ndarray:
    """Generators of N_gphΓ × N_{R^p_+}: active ∇g and -e_{u_i} for u_i = 0."""
    bp = ldref.source
    space = ldref.space
    dim = space.total_dim
    rows = []
    for g in bp.lower_constraints:
        if float(g.evaluate(space, values)) >= -settings.tol_act:
            rows.append(gradient_full(g, space, values))
    if space.has("u"):
        for i in range(space.dim("u")):
            idx = space.index("u", i)
            if abs(values[idx]) <= settings.tol_act:
                row = np.zeros(dim)
                row[idx] = -1.0
                rows.append(row)
    return np.array(rows).reshape(-1, dim)


def _not_closed_form(condition: str) -> CqReport:
    return CqReport(condition=condition, verdict="not_applicable",
                    notes=["ψ_ℓ has no closed form with polyhedral domain"])


def check_bcq_closed_form(ldref: ReformulatedNlp, pt: Point, tol: float | None = None) -> CqReport:
    """N_Ω ∩ (-N_𝓕) = {0}, decided by LPs maximizing ±η_k over normalized combinations."""
    tol = settings.rank_tol if tol is None else tol
    if ldref.closed_form is None or not ldref.closed_form.polyhedral:
        return _not_closed_form("bcq")
    values = _ld_feasible_point(ldref, pt)
    gens, lin = _omega_cone(ldref, values)
    cone_f = _feasible_set_cone(ldref, values)
    dim = ldref.space.total_dim
    n_g, n_l, n_h = gens.shape[0], lin.shape[0], cone_f.shape[0]
    tolerances = _tolerances(tol=tol, tolAct=settings.tol_act)
    if n_g + n_l == 0:
        return CqReport(condition="bcq", verdict="holds", tolerances=tolerances, notes=["N_Ω = {0}"])
    # variables: α (n_g), β⁺ (n_l), β⁻ (n_l), γ (n_h), all >= 0
    eta_map = np.hstack([gens.T, lin.T, -lin.T])
    a_eq = np.hstack([eta_map, cone_f.T]) if n_h else eta_map
    size = a_eq.shape[1]
    best, best_eta = 0.0, None
    for k in range(dim):
        for sign in (1.0, -1.0):
            c = np.zeros(size)
            c[: eta_map.shape[1]] = -sign * eta_map[k]
            res = solve_lp(c, a_ub=np.ones((1, size)), b_ub=[1.0], a_eq=a_eq, b_eq=np.zeros(dim),
                           bounds=[(0.0, None)] * size)
            if res.ok and res.x is not None and -res.fun > best:
                best = -res.fun
                best_eta = eta_map @ res.x[: eta_map.shape[1]]
    if best > tol and best_eta is not None:
        eta = best_eta / np.max(np.abs(best_eta))
        eta = np.where(np.abs(eta) < 1e-12, 0.0, eta) + 0.0
        return CqReport(
            condition="bcq", verdict="violated", tolerances=tolerances, residual=best,
            certificate=CqCertificate(kind="cone_element", values=eta.tolist(),
                                      labels=ldref.space.labels()),
        )
    return CqReport(condition="bcq", verdict="holds", tolerances=tolerances, residual=best)


def _horizon_multiplier(j_smooth: np.ndarray, gens: np.ndarray, lin: np.ndarray,
                        tol: float) -> tuple[np.ndarray, np.ndarray] | None:
    """λ >= 0 and a nonzero η ∈ N_Ω with J_sᵀλ + η = 0, or None.

    Returns (λ, weights) with weights over the generators then the lineality
    directions; maximizes ±η_k over combinations normalized to total weight 1.
    """
    n_s, n_g, n_l = j_smooth.shape[0], gens.shape[0], lin.shape[0]
    if n_g + n_l == 0:
        return None
    dim = j_smooth.shape[1]
    # variables: λ (n_s), α (n_g), β⁺ (n_l), β⁻ (n_l), all >= 0
    eta_map = np.hstack([np.zeros((dim, n_s)), gens.T, lin.T, -lin.T])
    a_eq = eta_map.copy()
    a_eq[:, :n_s] = j_smooth.T
    size = a_eq.shape[1]
    for k in range(dim):
        if not np.any(eta_map[k]):
            continue
        for sign in (1.0, -1.0):
            res = solve_lp(-sign * eta_map[k], a_ub=np.ones((1, size)), b_ub=[1.0], a_eq=a_eq,
                           b_eq=np.zeros(dim), bounds=[(0.0, None)] * size)
            if res.ok and res.x is not None and -res.fun > tol:
                x = res.x / np.max(np.abs(eta_map @ res.x))
                weights = np.concatenate([x[n_s: n_s + n_g], x[n_s + n_g: n_s + n_g + n_l] - x[n_s + n_g + n_l:]])
                return x[:n_s], weights
    return None


def check_nsmfcq_ld(ldref: ReformulatedNlp, pt: Point, tol: float | None = None) -> CqReport:
    """NSMFCQ for the closed-form Lagrange-dual reformulation.

    χ = (f - ψ_ℓ) splits into the smooth value row plus the indicator of Ω.
    Violated when the smooth active rows admit a nontrivial multiplier,
    when they cancel a nonzero element of N_Ω with χ at weight 0, or when
    together with N_Ω they absorb the gradient of the smooth part of χ.
    """
    tol = settings.lp_tol if tol is None else tol
    if ldref.closed_form is None or not ldref.closed_form.polyhedral:
        return _not_closed_form("nsmfcq")
    values = _ld_feasible_point(ldref, pt)
    nlp, space = ldref.nlp, ldref.space
    dim = space.total_dim
    q = values_at(nlp.inequalities, space, values)
    roles = ldref.inequality_roles
    smooth = [i for i, r in enumerate(roles) if r is not ConstraintRole.VALUE and q[i] >= -settings.tol_act]
    value_rows = [i for i, r in enumerate(roles) if r is ConstraintRole.VALUE]
    j_smooth = jacobian([nlp.inequalities[i] for i in smooth], space, values) \
        if smooth else np.zeros((0, dim))
    ineq_labels, _ = _labels(ldref)
    tolerances = _tolerances(tol=tol, tolAct=settings.tol_act)

    dual = _mfcq_dual(j_smooth, np.zeros((0, dim)), tol)
    if dual is not None:
        lam, _ = dual
        return CqReport(
            condition="nsmfcq", verdict="violated", active_set=smooth, tolerances=tolerances,
            certificate=CqCertificate(kind="multiplier", values=lam.tolist(),
                                      labels=[ineq_labels[i] for i in smooth]),
            notes=["smooth constraints alone admit a nontrivial multiplier"],
        )

    active_value = [i for i in value_rows if q[i] >= -settings.tol_act]
    if not active_value:
        return CqReport(condition="nsmfcq", verdict="holds", active_set=smooth, tolerances=tolerances,
                        notes=["value constraint inactive"])
    chi_grad = gradient_full(nlp.inequalities[active_value[0]], space, values)
    gens, lin = _omega_cone(ldref, values)
    n_s, n_g, n_l = j_smooth.shape[0], gens.shape[0], lin.shape[0]
    a_eq = np.hstack([j_smooth.T, gens.T, lin.T])
    labels = (
        [ineq_labels[i] for i in smooth] + ["chi"]
        + [f"omega_generator[{i}]" for i in range(n_g)]
        + [f"omega_lineality[{i}]" for i in range(n_l)]
    )

    horizon = _horizon_multiplier(j_smooth, gens, lin, tol)
    if horizon is not None:
        lam, weights = horizon
        x = np.concatenate([lam, weights])
        residual = float(np.abs(a_eq @ x).max(initial=0.0))
        return CqReport(
            condition="nsmfcq", verdict="violated", active_set=smooth + active_value,
            tolerances=tolerances, residual=residual,
            certificate=CqCertificate(kind="multiplier", values=np.concatenate([lam, [0.0], weights]).tolist(),
                                      labels=labels),
            notes=["a nonzero element of N_Ω is cancelled by the smooth rows; χ carries weight 0"],
        )

    bounds = [(0.0, None)] * (n_s + n_g) + [(None, None)] * n_l
    res = solve_lp(np.zeros(n_s + n_g + n_l), a_eq=a_eq, b_eq=-chi_grad, bounds=bounds)
    if res.ok and res.x is not None:
        residual = float(np.abs(a_eq @ res.x + chi_grad).max(initial=0.0))
        certificate_values = np.concatenate([res.x[:n_s], [1.0], res.x[n_s:]])
        return CqReport(
            condition="nsmfcq", verdict="violated", active_set=smooth + active_value,
            tolerances=tolerances, residual=residual,
            certificate=CqCertificate(kind="multiplier", values=certificate_values.tolist(),
                                      labels=labels),
        )
    return CqReport(condition="nsmfcq", verdict="holds", active_set=smooth + active_value,
                    tolerances=tolerances)
