"""Convex single-level solver.

Dispatch on structure:
  - affine constraints, affine objective    -> HiGHS LP
  - affine constraints, quadratic objective -> primal active-set QP on the KKT system
  - anything else certified convex          -> log-barrier interior point with Newton steps

Maximization problems are negated internally; reports keep the caller's
orientation.  Multipliers are ordered inequalities first, then equalities.
"""


import logging
import math

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import nnls

from app.core.config import settings
from app.core.exceptions import InputError
from app.domain.expr import Expr, Point, VarSpace, neg, sub, var
from app.domain.problem import Nlp, Sense
from app.schemas.reports import SolveReport
from app.services.calculus import (
    affine_rows,
    gradient_full,
    hessian_full,
    jacobian,
    quadratic_form,
    values_at,
)
from app.services.lp import recession_direction, solve_lp

logger = logging.getLogger(__name__)

_UNBOUNDED_LEVEL = -1e12


def oriented_objective(nlp: Nlp) -> Expr:
    """The objective as a minimization target."""
    return nlp.objective if nlp.sense is Sense.MINIMIZE else neg(nlp.objective)


def kkt_residual_values(
    nlp: Nlp, values: np.ndarray, v: np.ndarray,
) -> float:
    """KKT residual of the (minimization-oriented) program at flat ``values``."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size != nlp.n_constraints:
        raise InputError(f"multiplier has {v.size} entries, program has {nlp.n_constraints} constraints")
    space = nlp.space
    g = gradient_full(oriented_objective(nlp), space, values)
    constraints = (*nlp.inequalities, *nlp.equalities)
    if constraints:
        g = g + jacobian(constraints, space, values).T @ v
    parts = [float(np.max(np.abs(g), initial=0.0))]
    if nlp.n_ineq:
        q = values_at(nlp.inequalities, space, values)
        v_in = v[: nlp.n_ineq]
        parts += [
            float(np.max(np.maximum(q, 0.0))),
            float(np.max(np.maximum(-v_in, 0.0))),
            float(np.max(np.abs(v_in * q))),
        ]
    if nlp.n_eq:
        parts.append(float(np.max(np.abs(values_at(nlp.equalities, space, values)))))
    return max(parts)


def _point_dict(space: VarSpace, values: np.ndarray) -> dict[str, list[float]]:
    return Point(space, values).as_dict()


def _report(
    nlp: Nlp,
    status: str,
    values: np.ndarray | None,
    multipliers: np.ndarray | None = None,
    ray: np.ndarray | None = None,
    iterations: int = 0,
) -> SolveReport:
    sign = 1.0 if nlp.sense is Sense.MINIMIZE else -1.0
    if status == "unbounded":
        value = -math.inf * sign
    elif status == "infeasible":
        value = math.inf * sign
    else:
        value = float(nlp.objective.evaluate(nlp.space, values))
    residual = 0.0
    if status in ("optimal", "tolerance_reached") and values is not None:
        residual = kkt_residual_values(nlp, values, multipliers)
    return SolveReport(
        status=status,
        point=None if values is None else _point_dict(nlp.space, values),
        value=value,
        kkt_residual=residual,
        multipliers=[] if multipliers is None else [float(m) for m in multipliers],
        ray=None if ray is None else [float(r) for r in ray],
        iterations=iterations,
    )


def _finish(nlp: Nlp, values: np.ndarray, mult: np.ndarray, tol: float, iterations: int) -> SolveReport:
    report = _report(nlp, "optimal", values, mult, iterations=iterations)
    if report.kkt_residual > tol:
        report.status = "tolerance_reached"
        logger.warning(
            "solver stopped with KKT residual %.3e above tolerance %.1e", report.kkt_residual, tol,
        )
    return report


# ---------------------------------------------------------------------------
# LP
# ---------------------------------------------------------------------------


def _polish_multipliers(grad_obj: np.ndarray, a_in: np.ndarray, a_eq: np.ndarray, v_in: np.ndarray,
                        active: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Refit multipliers on the active set: min ‖∇p + A_Iᵀv_I + Eᵀμ‖ with v_I >= 0."""
    n_eq = a_eq.shape[0]
    cols = [a_in[active].T]
    if n_eq:
        # free μ split as μ⁺ - μ⁻
        cols += [a_eq.T, -a_eq.T]
    mat = np.hstack(cols) if cols else np.zeros((grad_obj.size, 0))
    if mat.shape[1] == 0:
        return v_in, np.zeros(n_eq)
    sol, _ = nnls(mat, -grad_obj)
    k = int(active.sum())
    v = np.zeros_like(v_in)
    v[active] = sol[:k]
    mu = sol[k:k + n_eq] - sol[k + n_eq:] if n_eq else np.zeros(0)
    return v, mu


def _phase_one(n: int, a_in, b_in, a_eq, b_eq):
    """A feasible point of the polyhedral constraints, or None when there is none."""
    res = solve_lp(
        np.zeros(n), a_ub=a_in if a_in.size else None, b_ub=b_in,
        a_eq=a_eq if a_eq.size else None, b_eq=b_eq,
    )
    if res.status == "infeasible":
        return None
    if res.x is None:
        raise InputError(f"phase-one LP failed with status {res.status}")
    return res.x


def _solve_lp(nlp: Nlp, c: np.ndarray, a_in, b_in, a_eq, b_eq, tol: float) -> SolveReport:
    res = solve_lp(
        c,
        a_ub=a_in if a_in.size else None, b_ub=b_in,
        a_eq=a_eq if a_eq.size else None, b_eq=b_eq,
    )
    if res.status == "infeasible":
        return _report(nlp, "infeasible", None)
    if res.status == "unbounded":
        # HiGHS may flag an empty region as unbounded during presolve
        if _phase_one(c.size, a_in, b_in, a_eq, b_eq) is None:
            return _report(nlp, "infeasible", None)
        ray = recession_direction(c, a_in if a_in.size else None, a_eq if a_eq.size else None)
        return _report(nlp, "unbounded", None, ray=ray)
    if not res.ok or res.x is None:
        raise InputError(f"LP solver failed with status {res.status}")
    x = res.x
    v_in = -res.ineq_duals if a_in.size else np.zeros(0)
    v_eq = -res.eq_duals if a_eq.size else np.zeros(0)
    mult = np.concatenate([v_in, v_eq])
    if kkt_residual_values(nlp, x, mult) > tol and a_in.size:
        active = a_in @ x - b_in >= -settings.tol_act
        v_in, v_eq = _polish_multipliers(c, a_in, a_eq, v_in, active)
        mult = np.concatenate([v_in, v_eq])
    return _finish(nlp, x, mult, tol, 1)


# ---------------------------------------------------------------------------
# QP (primal active set)
# ---------------------------------------------------------------------------


def _independent_rows(rows: np.ndarray, candidates: list[int], base: np.ndarray) -> list[int]:
    chosen: list[int] = []
    current = base
    for i in candidates:
        trial = np.vstack([current, rows[i]]) if current.size else rows[i][None, :]
        if np.linalg.matrix_rank(trial, tol=settings.rank_tol) == trial.shape[0]:
            chosen.append(i)
            current = trial
    return chosen


def _solve_qp(nlp: Nlp, q: np.ndarray, c: np.ndarray, a_in, b_in, a_eq, b_eq, tol: float,
              max_iter: int) -> SolveReport:
    n = c.size
    start = _phase_one(n, a_in, b_in, a_eq, b_eq)
    if start is None:
        return _report(nlp, "infeasible", None)
    # rays are only meaningful once the region is known to be nonempty
    unbounded_dir = recession_direction(
        c, a_in if a_in.size else None, a_eq if a_eq.size else None, extra_eq=q,
    )
    if unbounded_dir is not None:
        return _report(nlp, "unbounded", None, ray=unbounded_dir)
    x = start.copy()
    n_eq = a_eq.shape[0]
    active_now = [i for i in range(a_in.shape[0]) if a_in[i] @ x - b_in[i] >= -settings.tol_act]
    work = _independent_rows(a_in, active_now, a_eq)

    lam = np.zeros(len(work))
    mu = np.zeros(n_eq)
    for iteration in range(1, max_iter + 1):
        g = q @ x + c
        m = np.vstack([a_eq, a_in[work]]) if work else a_eq
        k = m.shape[0]
        z = null_space(np.vstack([m, q]), rcond=settings.rank_tol)
        descent = z @ (z.T @ g) if z.size else np.zeros(n)
        if np.linalg.norm(descent) > tol:
            # zero-curvature descent: move until a constraint blocks
            p = -descent / np.linalg.norm(descent)
            alpha_max = math.inf
        else:
            kkt = np.block([[q, m.T], [m, np.zeros((k, k))]]) if k else q
            rhs = np.concatenate([-g, np.zeros(k)])
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            p, dual = sol[:n], sol[n:]
            mu, lam = dual[:n_eq], dual[n_eq:]
            alpha_max = 1.0
        if np.linalg.norm(p, ord=np.inf) <= 1e-12 * max(1.0, np.linalg.norm(x, ord=np.inf)):
            if lam.size == 0 or lam.min() >= -tol:
                v_in = np.zeros(a_in.shape[0])
                v_in[work] = np.maximum(lam, 0.0)
                return _finish(nlp, x, np.concatenate([v_in, mu]), tol, iteration)
            drop = int(np.argmin(lam))
            logger.debug("active set: drop constraint %d (λ=%.3e)", work[drop], lam[drop])
            work.pop(drop)
            lam = np.delete(lam, drop)
            continue
        alpha, blocking = alpha_max, None
        for i in range(a_in.shape[0]):
            if i in work:
                continue
            slope = a_in[i] @ p
            if slope > 1e-14:
                step = (b_in[i] - a_in[i] @ x) / slope
                if step < alpha:
                    alpha, blocking = max(step, 0.0), i
        if math.isinf(alpha):
            return _report(nlp, "unbounded", None, ray=p / np.max(np.abs(p)))
        x = x + alpha * p
        if blocking is not None:
            work.append(blocking)
            lam = np.append(lam, 0.0)
    logger.warning("active-set QP hit max_iter=%d", max_iter)
    v_in = np.zeros(a_in.shape[0])
    if len(lam) == len(work):
        v_in[work] = np.maximum(lam, 0.0)
    return _report(nlp, "tolerance_reached", x, np.concatenate([v_in, mu]), iterations=max_iter)


# ---------------------------------------------------------------------------
# Log-barrier interior point
# ---------------------------------------------------------------------------


class _Barrier:
    """min f0(w) s.t. q_i(w) < 0, E w = e via Newton on t·f0 - Σ log(-q_i)."""

    def __init__(self, space: VarSpace, f0: Expr, ineqs: tuple[Expr, ...], a_eq, b_eq, max_iter: int):
        self.space = space
        self.f0 = f0
        self.ineqs = ineqs
        self.a_eq = a_eq
        self.b_eq = b_eq
        self.max_iter = max_iter
        self.iterations = 0

    def _phi(self, t: float, w: np.ndarray) -> float:
        q = values_at(self.ineqs, self.space, w)
        if np.any(q >= 0):
            return math.inf
        return t * float(self.f0.evaluate(self.space, w)) - float(np.sum(np.log(-q)))

    def centering(self, t: float, w: np.ndarray) -> np.ndarray:
        n = w.size
        k = self.a_eq.shape[0]
        for _ in range(50):
            self.iterations += 1
            q = values_at(self.ineqs, self.space, w)
            grad = t * gradient_full(self.f0, self.space, w)
            hess = t * hessian_full(self.f0, self.space, w)
            for qi, e in zip(q, self.ineqs, strict=True):
                gi = gradient_full(e, self.space, w)
                grad += gi / -qi
                hess += hessian_full(e, self.space, w) / -qi + np.outer(gi, gi) / qi**2
            kkt = np.block([[hess, self.a_eq.T], [self.a_eq, np.zeros((k, k))]]) if k else hess
            rhs = np.concatenate([-grad, np.zeros(k)])
            try:
                step = np.linalg.solve(kkt, rhs)[:n]
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:n]
            decrement = float(-grad @ step)
            if decrement / 2.0 <= 1e-12:
                break
            alpha, base = 1.0, self._phi(t, w)
            while alpha > 1e-14:
                trial = w + alpha * step
                if self._phi(t, trial) <= base - 0.25 * alpha * decrement:
                    break
                alpha *= 0.5
            w = w + alpha * step
            if float(self.f0.evaluate(self.space, w)) < _UNBOUNDED_LEVEL:
                break
        return w

    def run(self, w: np.ndarray, tol: float) -> tuple[np.ndarray, float]:
        m = len(self.ineqs)
        t = 1.0
        if m == 0:
            return self.centering(1.0, w), t
        while self.iterations < self.max_iter * 50:
            w = self.centering(t, w)
            if float(self.f0.evaluate(self.space, w)) < _UNBOUNDED_LEVEL:
                break
            if m / t < tol / 10.0:
                break
            t *= 10.0
        return w, t


def _equality_start(a_eq: np.ndarray, b_eq: np.ndarray, w0: np.ndarray) -> np.ndarray:
    if not a_eq.size:
        return w0
    correction, *_ = np.linalg.lstsq(a_eq, b_eq - a_eq @ w0, rcond=None)
    return w0 + correction


def _verified_ray(nlp: Nlp, f0: Expr, origin: np.ndarray, end: np.ndarray,
                  a_eq: np.ndarray, tol: float) -> np.ndarray | None:
    """Normalised ``end - origin`` if it stays feasible and keeps decreasing f0 far out."""
    direction = end - origin
    scale = float(np.max(np.abs(direction), initial=0.0))
    if scale == 0.0:
        return None
    direction = direction / scale
    if a_eq.size and np.max(np.abs(a_eq @ direction)) > tol:
        return None
    space = nlp.space
    previous = float(f0.evaluate(space, end))
    for s in (1.0, 1e2, 1e4, 1e6):
        trial = end + s * direction
        if nlp.n_ineq and np.any(values_at(nlp.inequalities, space, trial) > tol):
            return None
        current = float(f0.evaluate(space, trial))
        if not current < previous:
            return None
        previous = current
    return direction


def _solve_barrier(nlp: Nlp, f0: Expr, a_eq, b_eq, w0: np.ndarray, tol: float,
                   max_iter: int) -> SolveReport:
    space = nlp.space
    ineqs = nlp.inequalities
    w = _equality_start(a_eq, b_eq, w0)
    if a_eq.size and np.max(np.abs(a_eq @ w - b_eq)) > tol:
        return _report(nlp, "infeasible", None)
    if ineqs and np.any(values_at(ineqs, space, w) >= 0):
        # phase I: min s s.t. q_i(w) - s <= 0, -1 - s <= 0
        ext = space.extend(("slack_", 1))
        s = var("slack_", 0)
        phase_ineqs = tuple(sub(e, s) for e in ineqs) + (neg(s) - 1.0,)
        a_ext = np.hstack([a_eq, np.zeros((a_eq.shape[0], 1))]) if a_eq.size else np.zeros((0, ext.total_dim))
        start = np.append(w, max(values_at(ineqs, space, w).max(), -0.5) + 1.0)
        phase = _Barrier(ext, s, phase_ineqs, a_ext, b_eq, max_iter)
        sol, _ = phase.run(start, 1e-10)
        if sol[-1] >= 0.0:
            logger.info("barrier phase I found no strictly feasible point (s*=%.3e)", sol[-1])
            if sol[-1] > tol:
                return _report(nlp, "infeasible", None)
            return _report(nlp, "tolerance_reached", sol[:-1], np.zeros(nlp.n_constraints))
        w = sol[:-1]
    barrier = _Barrier(space, f0, ineqs, a_eq, b_eq, max_iter)
    feasible_start = w
    w, t = barrier.run(w, tol)
    if float(f0.evaluate(space, w)) < _UNBOUNDED_LEVEL:
        ray = _verified_ray(nlp, f0, feasible_start, w, a_eq, tol)
        if ray is not None:
            return _report(nlp, "unbounded", None, ray=ray)
        logger.warning("barrier objective fell below %.0e without a verifiable recession ray",
                       _UNBOUNDED_LEVEL)
        return _report(nlp, "tolerance_reached", w, np.zeros(nlp.n_constraints),
                       iterations=barrier.iterations)
    q = values_at(ineqs, space, w)
    v_in = 1.0 / (-t * q) if ineqs else np.zeros(0)
    mu = np.zeros(a_eq.shape[0])
    if a_eq.size:
        g = gradient_full(f0, space, w)
        if ineqs:
            g = g + jacobian(ineqs, space, w).T @ v_in
        mu, *_ = np.linalg.lstsq(a_eq.T, -g, rcond=None)
    return _finish(nlp, w, np.concatenate([v_in, mu]), tol, barrier.iterations)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def solve_convex(
    nlp: Nlp,
    start: Point | None = None,
    tol: float | None = None,
    max_iter: int | None = None,
) -> SolveReport:
    """Solve a certified-convex program.

    Status ``optimal`` guarantees ``kkt_residual <= tol``; ``unbounded`` comes
    with a feasible recession ray along which the objective strictly decreases.
    """
    if not nlp.is_convex:
        raise InputError("solve_convex needs a program tagged convex")
    tol = settings.tol if tol is None else tol
    max_iter = settings.max_iter if max_iter is None else max_iter
    space = nlp.space
    f0 = oriented_objective(nlp)
    a_eq, b_eq = affine_rows(nlp.equalities, space)
    if nlp.is_polyhedral:
        a_in, b_in = affine_rows(nlp.inequalities, space)
        form = quadratic_form(f0, space)
        if form is not None:
            q, c, _ = form
            if not np.any(q):
                return _solve_lp(nlp, c, a_in, b_in, a_eq, b_eq, tol)
            return _solve_qp(nlp, q, c, a_in, b_in, a_eq, b_eq, tol, max_iter)
    w0 = np.zeros(space.total_dim) if start is None else np.asarray(start.values, dtype=np.float64)
    return _solve_barrier(nlp, f0, a_eq, b_eq, w0, tol, max_iter)


def feasibility_violations(nlp: Nlp, values: np.ndarray, tol: float) -> list[str]:
    """Human-readable list of the constraints violated at ``values``."""
    found = []
    if nlp.n_ineq:
        for i, q in enumerate(values_at(nlp.inequalities, nlp.space, values)):
            if q > tol:
                found.append(f"inequality {i}: {q:.3e} > 0")
    if nlp.n_eq:
        for i, h in enumerate(values_at(nlp.equalities, nlp.space, values)):
            if abs(h) > tol:
                found.append(f"equality {i}: |{h:.3e}| > 0")
    return found


def require_feasible(nlp: Nlp, values: np.ndarray, tol: float, what: str) -> None:
    violations = feasibility_violations(nlp, values, tol)
    if violations:
        raise InputError(f"{what} is infeasible: " + "; ".join(violations))
