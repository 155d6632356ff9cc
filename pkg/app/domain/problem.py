"""Domain containers: single-level programs, bilevel problems, polyhedra, reformulations.

Folder intent:
  Nlp                    min/max p(w) s.t. q_i(w) <= 0 (inequalities), q_i(w) = 0 (equalities)
  BilevelProblem         upper data (F, G) + lower data (f, g) over blocks x ∈ R^n, y ∈ R^m
  Polyhedron             {v | E v = e, H v <= h} in explicit matrix form
  MultiplierPolyhedron   Λ(x, y) = {u >= 0 | ∇_y L = 0, u_i = 0 off the active set}
  ReformulatedNlp        an Nlp tagged with its reformulation kind, block provenance
                         and constraint roles
"""


from __future__ import annotations

import sys
import threading
from collections.abc import Callable
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import NamedTuple

import numpy as np

from app.core.exceptions import BudgetExceededError, InputError
from app.domain.expr import Expr, VarSpace, blocks_of, certify_convex, check_space, is_affine, neg

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:  # Python 3.10 backport matching enum.StrEnum's str()/format() behaviour
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__


class Sense(StrEnum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"


class ConvexityTag(StrEnum):
    CONVEX = "convex"
    UNKNOWN = "unknown"


class ReformKind(StrEnum):
    VF = "vf"
    KKT = "kkt"
    GE = "ge"
    LD = "ld"
    WD = "wd"
    MWD = "mwd"


class DualKind(StrEnum):
    LAGRANGE = "lagrange"
    WOLFE = "wolfe"
    MOND_WEIR = "mond_weir"


class FiberKind(StrEnum):
    ELL = "ell"
    W = "w"
    MW = "mw"


class Provenance(StrEnum):
    ORIGINAL = "original"
    IMPLICIT = "implicit"


class ConstraintRole(StrEnum):
    UPPER = "upper"                        # G(x) <= 0
    LOWER = "lower"                        # g(x, y) <= 0
    SIGN = "multiplier_sign"               # -u <= 0
    VALUE = "value"                        # f(x, y) <= φ / ψ_ℓ / L / f(x, z)
    VALUE_DOMAIN = "value_domain"          # effective domain of a closed-form ψ_ℓ
    STATIONARITY = "stationarity"          # ∇_2 L = 0
    COMPLEMENTARITY = "complementarity"    # uᵀg = 0
    DUAL_VALUE = "dual_value"              # -uᵀg(x, z) <= 0


class Dims(NamedTuple):
    n: int
    m: int
    p: int
    q: int


# ---------------------------------------------------------------------------
# Single-level programs
# ---------------------------------------------------------------------------


def classify_convexity(
    space: VarSpace,
    objective: Expr,
    inequalities: tuple[Expr, ...],
    equalities: tuple[Expr, ...],
    sense: Sense,
) -> ConvexityTag:
    """Convex iff the (oriented) objective and inequalities are certified and equalities affine."""
    blocks = space.names
    oriented = objective if sense is Sense.MINIMIZE else neg(objective)
    certified = (
        certify_convex(oriented, blocks, space)
        and all(certify_convex(q, blocks, space) for q in inequalities)
        and all(is_affine(h, blocks) for h in equalities)
    )
    return ConvexityTag.CONVEX if certified else ConvexityTag.UNKNOWN


@dataclass(frozen=True, eq=False)
class Nlp:
    space: VarSpace
    objective: Expr
    inequalities: tuple[Expr, ...] = ()
    equalities: tuple[Expr, ...] = ()
    sense: Sense = Sense.MINIMIZE
    convexity_tag: ConvexityTag | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        object.__setattr__(self, "equalities", tuple(self.equalities))
        for e in (self.objective, *self.inequalities, *self.equalities):
            check_space(e, self.space)
        certified = classify_convexity(
            self.space, self.objective, self.inequalities, self.equalities, self.sense,
        )
        if self.convexity_tag is None:
            object.__setattr__(self, "convexity_tag", certified)
        elif self.convexity_tag is ConvexityTag.CONVEX and certified is not ConvexityTag.CONVEX:
            raise InputError("convexity_tag=convex but the structural convexity check fails")

    @property
    def n_ineq(self) -> int:
        return len(self.inequalities)

    @property
    def n_eq(self) -> int:
        return len(self.equalities)

    @property
    def n_constraints(self) -> int:
        return self.n_ineq + self.n_eq

    @property
    def is_convex(self) -> bool:
        return self.convexity_tag is ConvexityTag.CONVEX

    @property
    def is_polyhedral(self) -> bool:
        blocks = self.space.names
        return all(is_affine(c, blocks) for c in (*self.inequalities, *self.equalities))

    def single_block(self) -> str:
        if len(self.space.blocks) != 1:
            raise InputError(
                f"expected a program over one decision block, got {', '.join(self.space.names)}"
            )
        return self.space.names[0]


# ---------------------------------------------------------------------------
# Bilevel problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BilevelProblem:
    """Optimistic bilevel problem: min F(x,y) s.t. G(x) <= 0, y ∈ Ψ(x).

    Ψ(x) is the solution set of the lower level min_y {f(x,y) | g(x,y) <= 0}.
    """

    n: int
    m: int
    p: int
    q: int
    upper_objective: Expr
    upper_constraints: tuple[Expr, ...]
    lower_objective: Expr
    lower_constraints: tuple[Expr, ...]
    name: str = "bilevel"
    lower_convex_in_y: bool = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "upper_constraints", tuple(self.upper_constraints))
        object.__setattr__(self, "lower_constraints", tuple(self.lower_constraints))
        if self.n < 1 or self.m < 1 or self.p < 0 or self.q < 0:
            raise InputError(f"invalid dims {self.dims}")
        if len(self.upper_constraints) != self.q:
            raise InputError(f"q = {self.q} but {len(self.upper_constraints)} G given")
        if len(self.lower_constraints) != self.p:
            raise InputError(f"p = {self.p} but {len(self.lower_constraints)} g given")
        for e in (self.upper_objective, self.lower_objective, *self.lower_constraints):
            check_space(e, self.space)
        for e in self.upper_constraints:
            check_space(e, self.upper_space)
        convex = certify_convex(self.lower_objective, ["y"], self.space) and all(
            certify_convex(g, ["y"], self.space) for g in self.lower_constraints
        )
        object.__setattr__(self, "lower_convex_in_y", convex)

    @property
    def dims(self) -> Dims:
        return Dims(self.n, self.m, self.p, self.q)

    @property
    def upper_space(self) -> VarSpace:
        return VarSpace.of(("x", self.n))

    @property
    def space(self) -> VarSpace:
        return VarSpace.of(("x", self.n), ("y", self.m))

    @property
    def lagrangian_space(self) -> VarSpace:
        return VarSpace.of(("x", self.n), ("y", self.m), ("u", self.p))

    @property
    def lower_affine_in_y(self) -> bool:
        return all(is_affine(e, ["y"]) for e in (self.lower_objective, *self.lower_constraints))

    def require_convex_lower(self, what: str) -> None:
        if not self.lower_convex_in_y:
            raise InputError(
                f"{what} needs a lower level certified convex in y; '{self.name}' is not"
            )


# ---------------------------------------------------------------------------
# Polyhedra
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """{v ∈ R^d | eq_matrix v = eq_rhs, ineq_matrix v <= ineq_rhs}."""

    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    ineq_matrix: np.ndarray
    ineq_rhs: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        d = len(self.labels)
        for name, rows in (("eq", self.eq_matrix), ("ineq", self.ineq_matrix)):
            arr = np.asarray(rows, dtype=np.float64).reshape(-1, d) if d else np.zeros((len(rows), 0))
            object.__setattr__(self, f"{name}_matrix", arr)
        object.__setattr__(self, "eq_rhs", np.asarray(self.eq_rhs, dtype=np.float64).reshape(-1))
        object.__setattr__(
            self, "ineq_rhs", np.asarray(self.ineq_rhs, dtype=np.float64).reshape(-1),
        )
        if self.eq_matrix.shape[0] != self.eq_rhs.size:
            raise InputError("equality matrix and rhs sizes differ")
        if self.ineq_matrix.shape[0] != self.ineq_rhs.size:
            raise InputError("inequality matrix and rhs sizes differ")

    @property
    def dim(self) -> int:
        return len(self.labels)

    def contains(self, v: np.ndarray, tol: float) -> bool:
        v = np.asarray(v, dtype=np.float64)
        eq_ok = np.all(np.abs(self.eq_matrix @ v - self.eq_rhs) <= tol) if self.eq_rhs.size else True
        in_ok = np.all(self.ineq_matrix @ v - self.ineq_rhs <= tol) if self.ineq_rhs.size else True
        return bool(eq_ok and in_ok)


@dataclass(frozen=True, eq=False)
class MultiplierPolyhedron:
    """Λ(x, y) = {u ∈ R^p_+ | A u = b, u_i = 0 for i outside the active set}."""

    active_index_set: tuple[int, ...]
    equality_matrix: np.ndarray
    rhs: np.ndarray
    p: int

    @property
    def nonneg_indices(self) -> tuple[int, ...]:
        return tuple(range(self.p))

    @property
    def zero_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.p) if i not in self.active_index_set)

    @property
    def free_dim(self) -> int:
        return len(self.active_index_set)

    def reduced(self) -> Polyhedron:
        """The polyhedron in the active coordinates only."""
        active = list(self.active_index_set)
        k = len(active)
        return Polyhedron(
            eq_matrix=np.asarray(self.equality_matrix, dtype=np.float64)[:, active],
            eq_rhs=self.rhs,
            ineq_matrix=-np.eye(k),
            ineq_rhs=np.zeros(k),
            labels=tuple(f"u[{i}]" for i in active),
        )

    def embed(self, reduced: np.ndarray) -> np.ndarray:
        full = np.zeros(self.p)
        full[list(self.active_index_set)] = reduced
        return full

    def contains(self, u: np.ndarray, tol: float) -> bool:
        u = np.asarray(u, dtype=np.float64)
        if u.size != self.p or np.any(u < -tol):
            return False
        if any(abs(u[i]) > tol for i in self.zero_indices):
            return False
        if self.rhs.size == 0:
            return True
        return bool(np.all(np.abs(self.equality_matrix @ u - self.rhs) <= tol))


# ---------------------------------------------------------------------------
# Reformulations
# ---------------------------------------------------------------------------


class ImplicitConstraint:
    """A callable constraint ``c(v) <= 0`` over a batch of flat points.

    Used where ψ_ℓ or φ has no algebraic form.  Evaluations are counted
    against a budget; gradients are never offered.
    """

    def __init__(
        self,
        name: str,
        evaluator: Callable[[np.ndarray], np.ndarray],
        description: str,
        budget: int,
        lipschitz_unreliable: bool = True,
    ):
        self.name = name
        self.description = description
        self.budget = budget
        self.lipschitz_unreliable = lipschitz_unreliable
        self._evaluator = evaluator
        self._evaluations = 0
        self._lock = threading.Lock()

    @property
    def evaluations(self) -> int:
        return self._evaluations

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        batch = np.atleast_2d(np.asarray(values, dtype=np.float64))
        with self._lock:
            if self._evaluations + batch.shape[0] > self.budget:
                raise BudgetExceededError(
                    f"implicit constraint '{self.name}' exceeded its budget of "
                    f"{self.budget} evaluations"
                )
            self._evaluations += batch.shape[0]
        return np.asarray(self._evaluator(batch), dtype=np.float64).reshape(batch.shape[0])


@dataclass(frozen=True, eq=False)
class LagrangeClosedForm:
    """ψ_ℓ(x, u) = psi on {domain_j(x, u) = 0}, −∞ elsewhere (L affine in y)."""

    psi: Expr
    domain: tuple[Expr, ...]
    polyhedral: bool


@dataclass(frozen=True, eq=False)
class ReformulatedNlp:
    kind: ReformKind
    nlp: Nlp
    source: BilevelProblem
    provenance: MappingProxyType
    inequality_roles: tuple[ConstraintRole, ...]
    equality_roles: tuple[ConstraintRole, ...]
    implicit_constraints: tuple[ImplicitConstraint, ...] = ()
    closed_form: LagrangeClosedForm | None = None
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.inequality_roles) != self.nlp.n_ineq:
            raise InputError("one role per inequality required")
        if len(self.equality_roles) != self.nlp.n_eq:
            raise InputError("one role per equality required")
        if not isinstance(self.provenance, MappingProxyType):
            object.__setattr__(self, "provenance", MappingProxyType(dict(self.provenance)))

    @property
    def space(self) -> VarSpace:
        return self.nlp.space

    @property
    def is_algebraic(self) -> bool:
        return not self.implicit_constraints

    def constraint_count(self) -> int:
        """Constraints as counted in the comparison tables.

        Closed-form domain equalities encode the effective domain of the
        single value constraint and are not counted separately.
        """
        algebraic = sum(
            1 for role in (*self.inequality_roles, *self.equality_roles)
            if role is not ConstraintRole.VALUE_DOMAIN
        )
        return algebraic + len(self.implicit_constraints)

    def implicit_blocks(self) -> list[str]:
        return [b for b, prov in self.provenance.items() if prov is Provenance.IMPLICIT]

    def uses_block(self, block: str) -> bool:
        exprs = (self.nlp.objective, *self.nlp.inequalities, *self.nlp.equalities)
        return any(block in blocks_of(e) for e in exprs)
