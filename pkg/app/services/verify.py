"""Grid oracles for global and local minimality, and the intermediate fibers K(x, y).

Scans are lexicographic over a box grid, split into chunks that may run on
a thread pool; chunk results merge by (value, scan index), so the outcome
does not depend on the worker count.
"""


import logging
import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from app.core.config import settings
from app.core.exceptions import BudgetExceededError, CapabilityError, InputError
from app.domain.expr import Expr, Point, VarSpace
from app.domain.problem import (
    BilevelProblem,
    FiberKind,
    ImplicitConstraint,
    Nlp,
    Polyhedron,
    ReformKind,
    ReformulatedNlp,
    Sense,
)
from app.schemas.reports import (
    FiberPointCheck,
    FiberReport,
    LocalCertificate,
    ProbeReport,
    ProbeSample,
    QuantifiedLocalReport,
    SolveReport,
)
from app.services.calculus import grad, hessian, values_at
from app.services.cq import check_lower_slater
from app.services.lower_level import lagrangian, multiplier_set, solve_lower_level
from app.services.polyhedra import VertexEnumeration, enumerate_vertices, polyhedron_vertices
from app.services.reform import build_reformulation, build_vf_ref

logger = logging.getLogger(__name__)

__all__ = [
    "Box",
    "brute_force_global",
    "local_min_certificate",
    "enumerate_K",
    "quantified_local_check",
    "inner_semicompactness_probe",
]

Searchable = Nlp | ReformulatedNlp | BilevelProblem

_RAY_SCALES = (1.0, 10.0, 100.0)


# ---------------------------------------------------------------------------
# Boxes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Box:
    """center ± radius sampled at ``step``; the center is always a grid point."""

    space: VarSpace
    center: np.ndarray
    radius: np.ndarray
    step: np.ndarray

    def __post_init__(self) -> None:
        d = self.space.total_dim
        for name in ("center", "radius", "step"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=np.float64), (d,)).copy()
            object.__setattr__(self, name, arr)
        if np.any(self.radius <= 0) or np.any(self.step <= 0):
            raise InputError("box radii and steps must be positive")

    @classmethod
    def from_blocks(
        cls,
        space: VarSpace,
        center: Point | Mapping[str, Sequence[float] | float] | np.ndarray,
        radius: float | Mapping[str, float],
        step: float | Mapping[str, float],
    ) -> "Box":
        """Per-block radius/step; scalars apply to every block."""
        if isinstance(center, Point):
            values = center.values
        elif isinstance(center, Mapping):
            values = Point.from_blocks(space, center).values
        else:
            values = np.asarray(center, dtype=np.float64)

        def expand(bounds) -> np.ndarray:
            if isinstance(bounds, Mapping):
                missing = [b for b in space.names if b not in bounds]
                if missing:
                    raise InputError(f"box is missing block(s) {', '.join(missing)}")
                return np.concatenate([np.full(space.dim(b), float(bounds[b])) for b in space.names])
            return np.full(space.total_dim, float(bounds))

        return cls(space, values, expand(radius), expand(step))

    @classmethod
    def around(
        cls,
        space: VarSpace,
        center: Point | np.ndarray,
        radius: float,
        step: float,
        implicit_step: float,
        implicit_blocks: Sequence[str] = ("z", "u"),
    ) -> "Box":
        steps = {b: (implicit_step if b in implicit_blocks else step) for b in space.names}
        return cls.from_blocks(space, center, radius, steps)

    @property
    def half_counts(self) -> np.ndarray:
        return np.floor(self.radius / self.step + 1e-9).astype(np.int64)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(int(2 * h + 1) for h in self.half_counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts, dtype=object))

    def axes(self) -> list[np.ndarray]:
        return [
            self.center[d] + (np.arange(2 * h + 1) - h) * self.step[d]
            for d, h in enumerate(self.half_counts)
        ]

    def points(self, start: int, stop: int, axes: list[np.ndarray] | None = None) -> np.ndarray:
        axes = self.axes() if axes is None else axes
        multi = np.unravel_index(np.arange(start, stop), self.counts)
        return np.column_stack([axes[d][multi[d]] for d in range(len(axes))])


# ---------------------------------------------------------------------------
# Grid programs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _GridProgram:
    space: VarSpace
    objective: Expr
    sign: float
    inequalities: tuple[Expr, ...]
    equalities: tuple[Expr, ...]
    implicit: tuple[ImplicitConstraint, ...]

    @classmethod
    def of(cls, prob: Searchable) -> "_GridProgram":
        if isinstance(prob, BilevelProblem):
            prob = build_vf_ref(prob)
        implicit: tuple[ImplicitConstraint, ...] = ()
        if isinstance(prob, ReformulatedNlp):
            implicit = prob.implicit_constraints
            prob = prob.nlp
        return cls(
            space=prob.space,
            objective=prob.objective,
            sign=-1.0 if prob.sense is Sense.MAXIMIZE else 1.0,
            inequalities=prob.inequalities,
            equalities=prob.equalities,
            implicit=implicit,
        )

    def _column(self, e: Expr, batch: np.ndarray) -> np.ndarray:
        values = np.asarray(e.evaluate(self.space, batch), dtype=np.float64)
        return np.broadcast_to(values, (batch.shape[0],))

    def oriented_values(self, batch: np.ndarray) -> np.ndarray:
        values = self.sign * self._column(self.objective, batch)
        return np.where(np.isnan(values), math.inf, values)

    def feasible(self, batch: np.ndarray, tol: float) -> np.ndarray:
        mask = np.ones(batch.shape[0], dtype=bool)
        for e in self.inequalities:
            mask &= self._column(e, batch) <= tol
        for e in self.equalities:
            mask &= np.abs(self._column(e, batch)) <= tol
        for ic in self.implicit:
            rows = np.flatnonzero(mask)
            if rows.size:
                mask[rows] &= ic.evaluate(batch[rows]) <= tol
        return mask


@dataclass(frozen=True)
class _ScanResult:
    value: float
    index: int
    feasible: int


def _scan(program: _GridProgram, box: Box, tol: float, workers: int | None) -> _ScanResult:
    total = box.size
    if total > settings.max_grid_points:
        raise BudgetExceededError(
            f"grid of {total} points exceeds the guard of {settings.max_grid_points}"
        )
    axes = box.axes()
    chunk = max(1, settings.grid_chunk)
    ranges = [(s, min(s + chunk, total)) for s in range(0, total, chunk)]

    def work(rng: tuple[int, int]) -> _ScanResult:
        start, stop = rng
        batch = box.points(start, stop, axes)
        mask = program.feasible(batch, tol)
        if not mask.any():
            return _ScanResult(math.inf, -1, 0)
        values = np.where(mask, program.oriented_values(batch), math.inf)
        i = int(np.argmin(values))
        return _ScanResult(float(values[i]), start + i, int(mask.sum()))

    workers = settings.workers if workers is None else workers
    if workers > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, ranges))
    else:
        results = [work(r) for r in ranges]
    feasible = sum(r.feasible for r in results)
    found = [r for r in results if r.index >= 0]
    if not found:
        return _ScanResult(math.inf, -1, 0)
    best = min(found, key=lambda r: (r.value, r.index))
    return _ScanResult(best.value, best.index, feasible)


def _point_dict(space: VarSpace, values: np.ndarray) -> dict[str, list[float]]:
    return Point(space, values).as_dict()


def brute_force_global(prob: Searchable, box: Box, tol: float | None = None,
                       workers: int | None = None) -> SolveReport:
    """Best feasible grid point of ``box``; ties go to the first point in scan order."""
    tol = settings.tol if tol is None else tol
    program = _GridProgram.of(prob)
    if box.space != program.space:
        raise InputError("box space does not match the program")
    result = _scan(program, box, tol, workers)
    if result.index < 0:
        logger.info("grid scan of %d points found no feasible point", box.size)
        return SolveReport(status="infeasible", value=program.sign * math.inf,
                           grid_points=box.size, feasible_points=0)
    best = box.points(result.index, result.index + 1)[0]
    return SolveReport(
        status="optimal",
        point=_point_dict(program.space, best),
        value=program.sign * result.value,
        grid_points=box.size,
        feasible_points=result.feasible,
    )


def _as_values(space: VarSpace, pt) -> np.ndarray:
    if isinstance(pt, Point):
        if pt.space != space:
            raise InputError("point space does not match the program")
        return np.asarray(pt.values)
    if isinstance(pt, Mapping):
        return Point.from_blocks(space, pt).values
    return Point(space, np.asarray(pt, dtype=np.float64)).values


def local_min_certificate(
    prob: Searchable,
    pt,
    radius: float | None = None,
    step: float | None = None,
    tol_obj: float | None = None,
    *,
    implicit_step: float | None = None,
    tol: float | None = None,
    workers: int | None = None,
) -> LocalCertificate:
    """Scan the feasible grid points within ``radius`` of ``pt`` for a better objective."""
    radius = settings.radius if radius is None else radius
    step = settings.step if step is None else step
    tol_obj = settings.tol_obj if tol_obj is None else tol_obj
    implicit_step = settings.implicit_step if implicit_step is None else implicit_step
    tol = settings.tol if tol is None else tol
    program = _GridProgram.of(prob)
    center = _as_values(program.space, pt)
    if not program.feasible(center[None, :], tol)[0]:
        raise InputError(f"point {_point_dict(program.space, center)} is infeasible")
    implicit_blocks = ("z", "u")
    if isinstance(prob, ReformulatedNlp):
        implicit_blocks = tuple(prob.implicit_blocks())
    box = Box.around(program.space, center, radius, step, implicit_step, implicit_blocks)
    center_value = float(program.oriented_values(center[None, :])[0])
    result = _scan(program, box, tol, workers)
    common = dict(
        center=_point_dict(program.space, center),
        value=program.sign * center_value,
        radius=box.radius.tolist(),
        step=box.step.tolist(),
        grid_points=box.size,
        feasible_points=result.feasible,
    )
    if result.index >= 0 and result.value < center_value - tol_obj:
        witness = box.points(result.index, result.index + 1)[0]
        return LocalCertificate(
            verdict="counterexample",
            witness=_point_dict(program.space, witness),
            drop=center_value - result.value,
            **common,
        )
    return LocalCertificate(verdict="no_better_point_at_resolution", **common)


# ---------------------------------------------------------------------------
# Intermediate fibers
# ---------------------------------------------------------------------------


_FIBER_OF_REFORM = {
    ReformKind.LD: FiberKind.ELL,
    ReformKind.KKT: FiberKind.ELL,
    ReformKind.WD: FiberKind.W,
    ReformKind.MWD: FiberKind.MW,
}


def _labels(bp: BilevelProblem, kind: FiberKind) -> tuple[str, ...]:
    u = tuple(f"u[{i}]" for i in range(bp.p))
    if kind is FiberKind.ELL:
        return u
    return tuple(f"z[{j}]" for j in range(bp.m)) + u


def _vertex_sets_match(a: VertexEnumeration, b: VertexEnumeration, tol: float = 1e-9) -> bool:
    def same(xs: list[np.ndarray], ys: list[np.ndarray]) -> bool:
        if len(xs) != len(ys):
            return False
        return all(any(np.max(np.abs(x - y), initial=0.0) <= tol for y in ys) for x in xs)

    return a.empty == b.empty and same(a.vertices, b.vertices) and same(a.rays, b.rays)


def _affine_fiber(bp: BilevelProblem, kind: FiberKind, pt: Point) -> Polyhedron:
    """Fibers for lower levels affine in y, written in the (z, u) coordinates.

    With a_i = ∇_y g_i, c = ∇_y f, g⁰ = g(x, 0) and f⁰ = f(x, 0):
      ell  Aᵀu = -c, u >= 0, -g⁰ᵀu <= f⁰ - f(x, y)
      w    the ell rows with z free
      mw   Aᵀu = -c, u >= 0, -cᵀz <= f⁰ - f(x, y), cᵀz - g⁰ᵀu <= 0
    """
    m, p = bp.m, bp.p
    y = pt.block("y")
    a = np.array([grad(g, "y", pt) for g in bp.lower_constraints]).reshape(p, m)
    c = grad(bp.lower_objective, "y", pt)
    f_val = float(bp.lower_objective.evaluate(bp.space, pt.values))
    g_vals = values_at(bp.lower_constraints, bp.space, pt.values) if p else np.zeros(0)
    g0 = g_vals - a @ y
    f0 = f_val - c @ y
    z_cols = 0 if kind is FiberKind.ELL else m

    def row(z_part: np.ndarray, u_part: np.ndarray) -> np.ndarray:
        return np.concatenate([z_part, u_part]) if z_cols else u_part

    eq = np.array([row(np.zeros(m), a[:, j]) for j in range(m)]).reshape(m, z_cols + p)
    ineq = [row(np.zeros(m), -np.eye(p)[i]) for i in range(p)]
    rhs = [0.0] * p
    if kind is FiberKind.MW:
        ineq += [row(-c, np.zeros(p)), row(c, -g0)]
        rhs += [f0 - f_val, 0.0]
    else:
        ineq.append(row(np.zeros(m), -g0))
        rhs.append(f0 - f_val)
    return Polyhedron(
        eq_matrix=eq,
        eq_rhs=-c,
        ineq_matrix=np.array(ineq).reshape(len(ineq), z_cols + p),
        ineq_rhs=np.array(rhs),
        labels=_labels(bp, kind),
    )


def _lambda_fiber(bp: BilevelProblem, kind: FiberKind, pt: Point) -> Polyhedron:
    """{y} × Λ(x, y) (or Λ itself for ell), as a polyhedron with z fixed."""
    lam = multiplier_set(bp, pt.block("x"), pt.block("y"))
    p, m = bp.p, bp.m
    zero_rows = np.eye(p)[list(lam.zero_indices)] if lam.zero_indices else np.zeros((0, p))
    u_eq = np.vstack([lam.equality_matrix.reshape(m, p), zero_rows])
    u_rhs = np.concatenate([lam.rhs, np.zeros(zero_rows.shape[0])])
    if kind is FiberKind.ELL:
        return Polyhedron(u_eq, u_rhs, -np.eye(p), np.zeros(p), _labels(bp, kind))
    eq = np.vstack([
        np.hstack([np.eye(m), np.zeros((m, p))]),
        np.hstack([np.zeros((u_eq.shape[0], m)), u_eq]),
    ])
    rhs = np.concatenate([pt.block("y"), u_rhs])
    ineq = np.hstack([np.zeros((p, m)), -np.eye(p)])
    return Polyhedron(eq, rhs, ineq, np.zeros(p), _labels(bp, kind))


def _fiber_report(kind: FiberKind, poly: Polyhedron, enum: VertexEnumeration,
                  matches: bool | None, notes: list[str]) -> FiberReport:
    return FiberReport(
        kind=kind.value,
        labels=list(poly.labels),
        eq_matrix=poly.eq_matrix.tolist(),
        eq_rhs=poly.eq_rhs.tolist(),
        ineq_matrix=poly.ineq_matrix.tolist(),
        ineq_rhs=poly.ineq_rhs.tolist(),
        vertices=[v.tolist() for v in enum.vertices],
        rays=[r.tolist() for r in enum.rays],
        lineality=[d.tolist() for d in enum.lineality],
        empty=enum.empty,
        matches_multiplier_set=matches,
        notes=notes,
    )


def _enumerate_fiber(bp: BilevelProblem, kind: FiberKind | str, x, y,
                     dim_cap: int | None) -> tuple[FiberReport, VertexEnumeration]:
    kind = FiberKind(kind)
    bp.require_convex_lower("fiber enumeration")
    xv = np.atleast_1d(np.asarray(x, dtype=np.float64))
    yv = np.atleast_1d(np.asarray(y, dtype=np.float64))
    pt = Point.from_blocks(bp.space, {"x": xv, "y": yv})
    lam = multiplier_set(bp, xv, yv)  # validates y ∈ Γ(x)
    notes: list[str] = []
    if bp.lower_affine_in_y:
        poly = _affine_fiber(bp, kind, pt)
    elif kind is FiberKind.ELL:
        poly = _lambda_fiber(bp, kind, pt)
        notes.append("K_ℓ taken as Λ(x, y): ψ_ℓ is not affine in u")
    else:
        lag = lagrangian(bp)
        lpt = Point.from_blocks(bp.lagrangian_space, {"x": xv, "y": yv, **({"u": np.zeros(bp.p)} if bp.p else {})})
        h = hessian(lag, "y", "y", lpt)
        if np.linalg.eigvalsh(h).min() <= settings.rank_tol:
            raise CapabilityError(
                f"K_{kind.value} needs a lower level affine in y or with a positive definite Hessian in y"
            )
        poly = _lambda_fiber(bp, kind, pt)
        notes.append("fiber taken as {y} × Λ(x, y) (strictly convex lower level)")
    enum = enumerate_vertices(poly, dim_cap)
    matches = None
    if kind is FiberKind.ELL and bp.p:
        matches = _vertex_sets_match(enum, polyhedron_vertices(lam, dim_cap))
        if not matches:
            logger.warning("K_ℓ and Λ differ at x=%s y=%s", xv.tolist(), yv.tolist())
    return _fiber_report(kind, poly, enum, matches, notes), enum


def enumerate_K(bp: BilevelProblem, kind: FiberKind | str, x, y,
                dim_cap: int | None = None) -> FiberReport:
    """Polyhedral description, vertices, rays and lineality of K_kind(x, y)."""
    return _enumerate_fiber(bp, kind, x, y, dim_cap)[0]


# ---------------------------------------------------------------------------
# Local checks over fibers
# ---------------------------------------------------------------------------


def _fiber_points(enum: VertexEnumeration, radius: float) -> list[tuple[str, np.ndarray]]:
    points: list[tuple[str, np.ndarray]] = [("vertex", v) for v in enum.vertices]
    points += [("edge_midpoint", (enum.vertices[i] + enum.vertices[j]) / 2.0) for i, j in enum.edges]
    if enum.vertices:
        base = enum.vertices[0]
        for r in enum.rays:
            points += [("ray", base + t * radius * r) for t in _RAY_SCALES]
        for d in enum.lineality:
            points += [("lineality", base + s * t * radius * d) for t in _RAY_SCALES for s in (1.0, -1.0)]
    return points


def _split_fiber(bp: BilevelProblem, kind: FiberKind, v: np.ndarray) -> dict[str, np.ndarray]:
    if kind is FiberKind.ELL:
        return {"u": v} if bp.p else {}
    out = {"z": v[: bp.m]}
    if bp.p:
        out["u"] = v[bp.m:]
    return out


def quantified_local_check(
    bp: BilevelProblem,
    reform_kind: ReformKind | str,
    x,
    y,
    radius: float | None = None,
    step: float | None = None,
    dim_cap: int | None = None,
    *,
    lower_slater: bool = False,
    tol_obj: float | None = None,
    workers: int | None = None,
) -> QuantifiedLocalReport:
    """Local certificate at (x, y, v) for vertices, bounded-edge midpoints and ray samples v of K(x, y).

    With ``lower_slater`` the Wolfe/Mond–Weir fiber is restricted to z = y,
    which needs Slater for the lower level at x.
    """
    reform_kind = ReformKind(reform_kind)
    if reform_kind not in _FIBER_OF_REFORM:
        raise CapabilityError(f"no intermediate fiber for the {reform_kind.value} reformulation")
    kind = _FIBER_OF_REFORM[reform_kind]
    radius = settings.radius if radius is None else radius
    xv = np.atleast_1d(np.asarray(x, dtype=np.float64))
    yv = np.atleast_1d(np.asarray(y, dtype=np.float64))
    ref = build_reformulation(bp, reform_kind)
    notes = ["fiber sampled at vertices, bounded-edge midpoints and ray points; the fiber itself may be a continuum"]
    slater_ok = False
    if lower_slater:
        slater_ok = check_lower_slater(bp, xv).verdict == "holds"
        if not slater_ok:
            notes.append("lower-level Slater fails at x; full fiber used")
    if slater_ok and kind is not FiberKind.ELL:
        pt = Point.from_blocks(bp.space, {"x": xv, "y": yv})
        poly = _lambda_fiber(bp, kind, pt)
        enum = enumerate_vertices(poly, dim_cap)
        fiber = _fiber_report(kind, poly, enum, None, ["restricted to z = y under lower-level Slater"])
    else:
        fiber, enum = _enumerate_fiber(bp, kind, xv, yv, dim_cap)
    checks = []
    for source, v in _fiber_points(enum, radius):
        implicit = _split_fiber(bp, kind, v)
        blocks = {"x": xv, "y": yv, **implicit}
        center = Point.from_blocks(ref.space, blocks)
        cert = local_min_certificate(ref, center, radius, step, tol_obj, workers=workers)
        checks.append(FiberPointCheck(
            source=source,
            implicit={k: np.asarray(val).tolist() for k, val in implicit.items()},
            certificate=cert,
        ))
    aggregate = (
        "all_local" if all(c.certificate.verdict == "no_better_point_at_resolution" for c in checks)
        else "some_counterexample"
    )
    if enum.empty:
        notes.append("fiber is empty")
    return QuantifiedLocalReport(
        reform_kind=reform_kind.value,
        fiber=fiber,
        checks=checks,
        aggregate=aggregate,
        lower_slater=slater_ok,
        notes=notes,
    )


def _probe_parameters(x: np.ndarray, radius: float, samples: int) -> list[np.ndarray]:
    """Parameters approaching x geometrically along ±e_i."""
    out = []
    for k in range(samples):
        scale = radius * 2.0 ** (-k)
        for i in range(x.size):
            for sign in (1.0, -1.0):
                xp = x.copy()
                xp[i] += sign * scale
                out.append(xp)
    return out


def inner_semicompactness_probe(
    bp: BilevelProblem,
    kind: FiberKind | str,
    x,
    y,
    radius: float | None = None,
    samples: int = 10,
    dim_cap: int | None = None,
) -> ProbeReport:
    """Sampled evidence on whether K stays bounded near (x, y); never a proof.

    Each sample takes x' near x, a lower-level solution y' at x', and the
    smallest vertex norm of K(x', y').  Norms above ``isc_norm_limit`` count
    as escaping.  Recession rays are reported but do not decide the verdict.
    """
    kind = FiberKind(kind)
    radius = settings.radius if radius is None else radius
    limit = settings.isc_norm_limit
    xv = np.atleast_1d(np.asarray(x, dtype=np.float64))
    yv = np.atleast_1d(np.asarray(y, dtype=np.float64))
    records: list[ProbeSample] = []
    notes = ["heuristic evidence from sampled fibers, not a proof"]
    skipped = 0
    for xp in [xv, *_probe_parameters(xv, radius, samples)]:
        if xp is xv:
            yp = yv
        else:
            sol = solve_lower_level(bp, xp)
            if sol.status != "optimal" or sol.point is None:
                skipped += 1
                continue
            yp = np.asarray(sol.point["y"])
        try:
            _, enum = _enumerate_fiber(bp, kind, xp, yp, dim_cap)
        except InputError:
            skipped += 1
            continue
        norms = [float(np.max(np.abs(v), initial=0.0)) for v in enum.vertices]
        records.append(ProbeSample(
            x=xp.tolist(),
            y=yp.tolist(),
            empty=enum.empty,
            min_vertex_norm=min(norms) if norms else None,
            max_vertex_norm=max(norms) if norms else None,
            has_rays=bool(enum.rays),
            has_lineality=bool(enum.lineality),
        ))
    if skipped:
        notes.append(f"{skipped} sample(s) skipped: lower level infeasible or unsolved")
    maxima = [s.min_vertex_norm for s in records if s.min_vertex_norm is not None]
    worst = max(maxima) if maxima else None
    rays_seen = any(s.has_rays or s.has_lineality for s in records)
    if rays_seen:
        notes.append("some fibers are unbounded (recession directions present)")
    verdict = "unbounded_evidence" if worst is not None and worst > limit else "bounded_evidence"
    return ProbeReport(
        kind=kind.value,
        verdict=verdict,
        norm_limit=limit,
        samples=records,
        max_vertex_norm=worst,
        rays_seen=rays_seen,
        notes=notes,
    )
