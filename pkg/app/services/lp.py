"""Thin wrapper around ``scipy.optimize.linprog`` (HiGHS).

All LPs in the workbench go through ``solve_lp`` so that tolerances,
status mapping and sign conventions for the duals live in one place.
"""


import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from app.core.config import settings

logger = logging.getLogger(__name__)

_STATUS = {0: "optimal", 1: "iteration_limit", 2: "infeasible", 3: "unbounded", 4: "numerical"}


@dataclass(frozen=True)
class LpResult:
    status: str
    x: np.ndarray | None
    fun: float
    ineq_duals: np.ndarray  # ∂fun/∂b_ub, nonpositive at optimum
    eq_duals: np.ndarray

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _as_matrix(a: np.ndarray | None, cols: int) -> np.ndarray | None:
    if a is None:
        return None
    arr = np.asarray(a, dtype=np.float64).reshape(-1, cols)
    return arr if arr.shape[0] else None


def solve_lp(
    c: np.ndarray,
    a_ub: np.ndarray | None = None,
    b_ub: np.ndarray | None = None,
    a_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    bounds: list[tuple[float | None, float | None]] | tuple | None = None,
    tol: float | None = None,
) -> LpResult:
    """min cᵀx s.t. a_ub x <= b_ub, a_eq x = b_eq, bounds (default: free)."""
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    n = c.size
    a_ub_m = _as_matrix(a_ub, n)
    a_eq_m = _as_matrix(a_eq, n)
    feas_tol = max(tol if tol is not None else settings.lp_tol, 1e-10)
    res = linprog(
        c,
        A_ub=a_ub_m,
        b_ub=None if a_ub_m is None else np.asarray(b_ub, dtype=np.float64).reshape(-1),
        A_eq=a_eq_m,
        b_eq=None if a_eq_m is None else np.asarray(b_eq, dtype=np.float64).reshape(-1),
        bounds=bounds if bounds is not None else (None, None),
        method="highs",
        options={"primal_feasibility_tolerance": feas_tol, "dual_feasibility_tolerance": feas_tol},
    )
    status = _STATUS.get(res.status, "numerical")
    ineq = getattr(getattr(res, "ineqlin", None), "marginals", None)
    eq = getattr(getattr(res, "eqlin", None), "marginals", None)
    logger.debug("linprog: n=%d status=%s fun=%s", n, status, res.fun)
    return LpResult(
        status=status,
        x=None if res.x is None else np.asarray(res.x, dtype=np.float64),
        fun=float(res.fun) if res.fun is not None else float("nan"),
        ineq_duals=np.zeros(0) if ineq is None else np.asarray(ineq, dtype=np.float64),
        eq_duals=np.zeros(0) if eq is None else np.asarray(eq, dtype=np.float64),
    )


def recession_direction(
    c: np.ndarray,
    a_ub: np.ndarray | None,
    a_eq: np.ndarray | None,
    extra_eq: np.ndarray | None = None,
    slope_tol: float = 1e-9,
) -> np.ndarray | None:
    """A direction d with a_ub d <= 0, a_eq d = 0, extra_eq d = 0 and cᵀd < -slope_tol.

    Searched over the box ‖d‖∞ <= 1; returns None when no such direction exists.
    """
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    n = c.size
    eq_blocks = [m for m in (_as_matrix(a_eq, n), _as_matrix(extra_eq, n)) if m is not None]
    a_eq_all = np.vstack(eq_blocks) if eq_blocks else None
    a_ub_m = _as_matrix(a_ub, n)
    res = solve_lp(
        c,
        a_ub=a_ub_m,
        b_ub=None if a_ub_m is None else np.zeros(a_ub_m.shape[0]),
        a_eq=a_eq_all,
        b_eq=None if a_eq_all is None else np.zeros(a_eq_all.shape[0]),
        bounds=[(-1.0, 1.0)] * n,
    )
    if res.ok and res.fun < -slope_tol and res.x is not None:
        return res.x
    return None
