"""Report schemas returned by the services, the CLI and the API.

Points are serialized as ``{block: [values]}`` mappings.  Non-finite
floats (φ = ±∞ flags, unbounded duals) are kept as floats here and
mapped to strings only when rendered (see services/report.py).
"""


from typing import Any, Literal

import numpy as np
from pydantic import Field

from app.domain.expr import VarSpace
from app.schemas.common import CamelModel

SolveStatus = Literal["optimal", "unbounded", "infeasible", "tolerance_reached"]
CqCondition = Literal["mfcq", "nsmfcq", "slater", "gcq_polyhedral", "bcq"]
CqVerdict = Literal["holds", "violated", "not_applicable"]
PointDict = dict[str, list[float]]


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


class SolveReport(CamelModel):
    status: SolveStatus
    point: PointDict | None = None
    value: float
    kkt_residual: float = 0.0
    multipliers: list[float] = Field(default_factory=list)
    ray: list[float] | None = Field(default=None, description="unboundedness certificate")
    iterations: int = 0
    grid_points: int | None = None
    feasible_points: int | None = None

    def flat(self, space: VarSpace) -> np.ndarray:
        if self.point is None:
            raise ValueError("report carries no point")
        return np.concatenate([np.asarray(self.point[name], dtype=np.float64) for name in space.names]) \
            if space.names else np.zeros(0)


# ---------------------------------------------------------------------------
# Duality
# ---------------------------------------------------------------------------


class LagrangeValue(CamelModel):
    """φ_ℓ(v) = inf_w 𝓛(w, v); ``value = -inf`` with a ray when unbounded."""

    value: float
    minimizer: list[float] | None = None
    ray: list[float] | None = None

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.value))


class DualCertificate(CamelModel):
    point: PointDict | None = None
    multiplier: list[float] = Field(default_factory=list)


class DualityReport(CamelModel):
    kind: str
    primal_value: float
    dual_value: float
    gap: float
    weak_duality_ok: bool
    certificate: DualCertificate | None = None
    convexity_certified: bool = True
    strong_duality_ok: bool | None = None
    slater: "CqReport | None" = None
    notes: list[str] = Field(default_factory=list)


class SaddlePointReport(CamelModel):
    is_saddle: bool
    residual: float


class ConverseReport(CamelModel):
    kind: str
    verdict: Literal["applies", "not_applicable"]
    reason: str
    min_singular_value: float | None = None
    min_eigenvalue: float | None = None
    gradient_norm: float | None = None
    primal_feasible: bool | None = None
    kkt_residual: float | None = None
    counterexample: bool = False


# ---------------------------------------------------------------------------
# Constraint qualifications
# ---------------------------------------------------------------------------


class CqCertificate(CamelModel):
    kind: Literal["direction", "multiplier", "point", "cone_element"]
    values: list[float]
    labels: list[str] = Field(default_factory=list)
    sigma: float | None = None


class CqReport(CamelModel):
    condition: CqCondition
    verdict: CqVerdict
    certificate: CqCertificate | None = None
    active_set: list[int] = Field(default_factory=list)
    tolerances: dict[str, float] = Field(default_factory=dict)
    residual: float | None = None
    dual_consistent: bool | None = None
    notes: list[str] = Field(default_factory=list)


class PolyhedralCone(CamelModel):
    """Nonnegative combinations of ``generators`` plus the span of ``lineality``."""

    generators: list[list[float]] = Field(default_factory=list)
    lineality: list[list[float]] = Field(default_factory=list)


class GeReport(CamelModel):
    feasible: bool
    multiplier: list[float] | None = None
    residual: float
    active_set: list[int] = Field(default_factory=list)
    gcq: CqReport


# ---------------------------------------------------------------------------
# Reformulations and tables
# ---------------------------------------------------------------------------


class CountSummary(CamelModel):
    kind: str
    n_vars: int
    n_implicit_vars: int
    n_constraints: int


class ConstraintEntry(CamelModel):
    role: str
    expr: str


class ImplicitEntry(CamelModel):
    name: str
    description: str
    budget: int
    lipschitz_unreliable: bool


class ReformulationReport(CamelModel):
    kind: str
    problem: str
    blocks: dict[str, int]
    provenance: dict[str, str]
    sense: str
    objective: str
    inequalities: list[ConstraintEntry] = Field(default_factory=list)
    equalities: list[ConstraintEntry] = Field(default_factory=list)
    implicit_constraints: list[ImplicitEntry] = Field(default_factory=list)
    constraint_count: int
    counts: CountSummary
    notes: list[str] = Field(default_factory=list)


class QualitativeRow(CamelModel):
    label: str
    entries: dict[str, str]


class ComparisonTable(CamelModel):
    title: str
    counts: list[CountSummary]
    qualitative: list[QualitativeRow]


class Comparison(CamelModel):
    dims: dict[str, int]
    tables: list[ComparisonTable]
    text: str


# ---------------------------------------------------------------------------
# Verification oracles
# ---------------------------------------------------------------------------


class LocalCertificate(CamelModel):
    verdict: Literal["no_better_point_at_resolution", "counterexample"]
    center: PointDict
    value: float
    witness: PointDict | None = None
    drop: float | None = None
    radius: list[float]
    step: list[float]
    grid_points: int
    feasible_points: int


class FiberReport(CamelModel):
    kind: str
    labels: list[str]
    eq_matrix: list[list[float]] = Field(default_factory=list)
    eq_rhs: list[float] = Field(default_factory=list)
    ineq_matrix: list[list[float]] = Field(default_factory=list)
    ineq_rhs: list[float] = Field(default_factory=list)
    vertices: list[list[float]] = Field(default_factory=list)
    rays: list[list[float]] = Field(default_factory=list)
    lineality: list[list[float]] = Field(default_factory=list)
    empty: bool = False
    matches_multiplier_set: bool | None = None
    notes: list[str] = Field(default_factory=list)

    @property
    def bounded(self) -> bool:
        return not self.rays and not self.lineality


class FiberPointCheck(CamelModel):
    source: Literal["vertex", "edge_midpoint", "ray", "lineality"]
    implicit: PointDict
    certificate: LocalCertificate


class QuantifiedLocalReport(CamelModel):
    reform_kind: str
    fiber: FiberReport
    checks: list[FiberPointCheck]
    aggregate: Literal["all_local", "some_counterexample"]
    lower_slater: bool = False
    notes: list[str] = Field(default_factory=list)


class ProbeSample(CamelModel):
    x: list[float]
    y: list[float]
    empty: bool = False
    min_vertex_norm: float | None = None
    max_vertex_norm: float | None = None
    has_rays: bool = False
    has_lineality: bool = False


class ProbeReport(CamelModel):
    kind: str
    verdict: Literal["bounded_evidence", "unbounded_evidence"]
    norm_limit: float
    samples: list[ProbeSample]
    max_vertex_norm: float | None = None
    rays_seen: bool = False
    notes: list[str] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# Examples, checks and the envelope
# ---------------------------------------------------------------------------


class ExampleAssertion(CamelModel):
    name: str
    passed: bool
    detail: str = ""


class ExampleReport(CamelModel):
    name: str
    passed: bool
    assertions: list[ExampleAssertion]
    details: dict[str, Any] = Field(default_factory=dict)


class CheckResult(CamelModel):
    what: str
    verdict: str
    exit_code: int
    detail: Any = None


class Report(CamelModel):
    """Envelope written by every command."""

    command: dict[str, Any]
    inputs_digest: str
    result: Any
    version: str
    tolerances: dict[str, float]


DualityReport.model_rebuild()
