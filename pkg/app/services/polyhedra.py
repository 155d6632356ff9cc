"""Polyhedral computations: vertex/ray/lineality enumeration and normal cones.

Enumeration is by active-set bases, which is exact and fine for the small
free dimensions the workbench handles (capped by ``dim_cap``).
"""


import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from app.core.config import settings
from app.core.exceptions import CapabilityError, InputError
from app.domain.expr import Point
from app.domain.problem import MultiplierPolyhedron, Polyhedron
from app.schemas.reports import PolyhedralCone
from app.services.lp import solve_lp

logger = logging.getLogger(__name__)

_FEAS_TOL = 1e-9
_ZERO = 1e-12


@dataclass
class VertexEnumeration:
    vertices: list[np.ndarray] = field(default_factory=list)
    rays: list[np.ndarray] = field(default_factory=list)
    lineality: list[np.ndarray] = field(default_factory=list)
    edges: list[tuple[int, int]] = field(default_factory=list)
    empty: bool = False

    @property
    def bounded(self) -> bool:
        return not self.rays and not self.lineality


def _clean(v: np.ndarray) -> np.ndarray:
    out = np.where(np.abs(v) < _ZERO, 0.0, v)
    return out + 0.0  # no negative zeros


def _dedupe(vectors: list[np.ndarray]) -> list[np.ndarray]:
    seen: dict[tuple[float, ...], np.ndarray] = {}
    for v in vectors:
        key = tuple(np.round(v, 9))
        seen.setdefault(key, v)
    return [seen[k] for k in sorted(seen)]


def _rank(m: np.ndarray) -> int:
    if m.size == 0:
        return 0
    return int(np.linalg.matrix_rank(m, tol=settings.rank_tol))


def enumerate_vertices(poly: Polyhedron, dim_cap: int | None = None) -> VertexEnumeration:
    """Vertices, extreme rays and a lineality basis of ``poly``.

    Vertices and rays are those of the pointed part ``poly ∩ (lineality)^⊥``.
    """
    cap = settings.dim_cap if dim_cap is None else dim_cap
    d = poly.dim
    if d > cap:
        raise CapabilityError(f"free dimension {d} exceeds the enumeration cap {cap}")
    E, e, H, h = poly.eq_matrix, poly.eq_rhs, poly.ineq_matrix, poly.ineq_rhs

    if d == 0:
        feasible = bool(np.all(np.abs(e) <= _FEAS_TOL) and np.all(h >= -_FEAS_TOL))
        return VertexEnumeration(vertices=[np.zeros(0)] if feasible else [], empty=not feasible)

    probe = solve_lp(np.zeros(d), H if H.size else None, h, E if E.size else None, e)
    if probe.status == "infeasible":
        return VertexEnumeration(empty=True)

    stacked = np.vstack([E, H]) if (E.size or H.size) else np.zeros((0, d))
    lin = null_space(stacked, rcond=settings.rank_tol) if stacked.shape[0] else np.eye(d)
    lineality = [_clean(col / np.max(np.abs(col))) for col in lin.T]

    e_full = np.vstack([E, lin.T]) if lin.shape[1] else E
    rhs_full = np.concatenate([e, np.zeros(lin.shape[1])]) if lin.shape[1] else e
    rank_e = _rank(e_full)
    k = d - rank_e

    vertices: list[np.ndarray] = []
    tight_sets: list[frozenset[int]] = []
    for subset in itertools.combinations(range(H.shape[0]), k):
        m = np.vstack([e_full, H[list(subset)]]) if subset else e_full
        if _rank(m) != d:
            continue
        rhs = np.concatenate([rhs_full, h[list(subset)]])
        v, *_ = np.linalg.lstsq(m, rhs, rcond=None)
        if np.max(np.abs(m @ v - rhs), initial=0.0) > _FEAS_TOL * max(1.0, np.abs(rhs).max(initial=0.0)):
            continue
        if H.size and np.any(H @ v - h > _FEAS_TOL):
            continue
        vertices.append(_clean(v))

    rays: list[np.ndarray] = []
    if k >= 1:
        for subset in itertools.combinations(range(H.shape[0]), k - 1):
            m = np.vstack([e_full, H[list(subset)]]) if subset else e_full
            if _rank(m) != d - 1:
                continue
            direction = null_space(m, rcond=settings.rank_tol)[:, 0]
            for sign in (1.0, -1.0):
                r = sign * direction
                slopes = H @ r if H.size else np.zeros(0)
                if np.all(slopes <= _FEAS_TOL) and np.any(slopes < -_FEAS_TOL):
                    rays.append(_clean(r / np.max(np.abs(r))))

    vertices = _dedupe(vertices)
    for v in vertices:
        tight_sets.append(frozenset(np.flatnonzero(np.abs(H @ v - h) <= _FEAS_TOL)) if H.size else frozenset())
    edges: list[tuple[int, int]] = []
    for i, j in itertools.combinations(range(len(vertices)), 2):
        common = sorted(tight_sets[i] & tight_sets[j])
        m = np.vstack([e_full, H[common]]) if common else e_full
        if _rank(m) == d - 1:
            edges.append((i, j))

    result = VertexEnumeration(
        vertices=vertices, rays=_dedupe(rays), lineality=lineality, edges=edges,
    )
    logger.debug(
        "enumerated %d vertices, %d rays, %d lineality directions in dimension %d",
        len(result.vertices), len(result.rays), len(result.lineality), d,
    )
    return result


def polyhedron_vertices(mp: MultiplierPolyhedron, dim_cap: int | None = None) -> VertexEnumeration:
    """Vertices (and recession directions) of Λ in the full ``p`` coordinates."""
    reduced = enumerate_vertices(mp.reduced(), dim_cap)
    return VertexEnumeration(
        vertices=[mp.embed(v) for v in reduced.vertices],
        rays=[mp.embed(r) for r in reduced.rays],
        lineality=[mp.embed(r) for r in reduced.lineality],
        edges=reduced.edges,
        empty=reduced.empty,
    )


def polyhedral_normal_cone(
    a: np.ndarray,
    b: np.ndarray,
    eq_a: np.ndarray | None,
    eq_b: np.ndarray | None,
    w: Point | np.ndarray,
    tol_act: float | None = None,
) -> PolyhedralCone:
    """Normal cone of {v | a v <= b, eq_a v = eq_b} at ``w``.

    Generators are the active rows of ``a``; the rows of ``eq_a`` span the
    lineality space.
    """
    tol = settings.tol_act if tol_act is None else tol_act
    values = w.values if isinstance(w, Point) else np.asarray(w, dtype=np.float64)
    d = values.size
    a = np.asarray(a, dtype=np.float64).reshape(-1, d)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    slack = a @ values - b if a.size else np.zeros(0)
    if np.any(slack > tol):
        raise InputError(f"point violates inequality rows {np.flatnonzero(slack > tol).tolist()}")
    generators = [a[i].tolist() for i in np.flatnonzero(slack >= -tol)]
    lineality: list[list[float]] = []
    if eq_a is not None and np.size(eq_a):
        eq_a = np.asarray(eq_a, dtype=np.float64).reshape(-1, d)
        eq_b = np.asarray(eq_b, dtype=np.float64).reshape(-1)
        residual = np.abs(eq_a @ values - eq_b)
        if np.any(residual > tol):
            raise InputError(f"point violates equality rows {np.flatnonzero(residual > tol).tolist()}")
        lineality = [row.tolist() for row in eq_a]
    return PolyhedralCone(generators=generators, lineality=lineality)
