"""Reformulation builders, ψ_ℓ closed forms, GE membership and the comparison tables."""


import numpy as np
import pytest

from app.core.exceptions import CapabilityError, InputError
from app.domain.expr import Point, VarSpace, var
from app.domain.problem import BilevelProblem, Dims, Provenance, ReformKind
from app.services.lower_level import solve_lower_level
from app.services.reform import (
    DUAL_KINDS,
    STANDARD_KINDS,
    build_kkt_ref,
    build_reformulation,
    count_summary,
    ge_ref_feasibility,
    lagrange_closed_form,
    qualitative_rows,
)

XU = VarSpace.of(("x", 1), ("u", 2))


def _roles(ref) -> list[str]:
    return [r.value for r in (*ref.inequality_roles, *ref.equality_roles)]


def _strictly_convex() -> BilevelProblem:
    """Lower level min_y {(y - x)² | y - 1 <= 0}."""
    x, y = var("x"), var("y")
    return BilevelProblem(
        n=1, m=1, p=1, q=0,
        upper_objective=x ** 2 + y ** 2, upper_constraints=(),
        lower_objective=(y - x) ** 2, lower_constraints=(y - 1,),
        name="strictly-convex",
    )


def _random_problem(rng: np.random.Generator, n: int, m: int, p: int, q: int) -> BilevelProblem:
    x = [var("x", i) for i in range(n)]
    y = [var("y", j) for j in range(m)]

    def affine(coefs):
        terms = [float(c) * v for c, v in zip(coefs, x + y, strict=False)]
        return sum(terms[1:], terms[0]) + float(rng.normal())

    return BilevelProblem(
        n=n, m=m, p=p, q=q,
        upper_objective=x[0] + y[0],
        upper_constraints=tuple(affine(rng.normal(size=n)) for _ in range(q)),
        lower_objective=affine(rng.normal(size=n + m)),
        lower_constraints=tuple(affine(rng.normal(size=n + m)) for _ in range(p)),
    )


class TestLagrangeClosedForm:
    def test_running_example(self, running):
        closed = lagrange_closed_form(running)
        assert closed.polyhedral
        assert len(closed.domain) == 1
        rng = np.random.default_rng(9)
        for x, u1, u2 in rng.uniform(-1, 1, size=(20, 3)):
            pt = np.array([x, u1, u2])
            assert closed.psi.evaluate(XU, pt) == pytest.approx(x * (u1 - u2) - u1 - u2)
            assert closed.domain[0].evaluate(XU, pt) == pytest.approx(u1 + u2 - 1)

    def test_matches_psi_on_the_segment(self, running):
        closed = lagrange_closed_form(running)
        for x in (-0.5, 0.0, 0.7):
            for u1 in (0.0, 0.3, 1.0):
                pt = np.array([x, u1, 1 - u1])
                assert closed.psi.evaluate(XU, pt) == pytest.approx(x * (2 * u1 - 1) - 1)

    def test_strictly_convex_quadratic(self):
        closed = lagrange_closed_form(_strictly_convex())
        space = VarSpace.of(("x", 1), ("u", 1))
        # inf_y (y - x)² + u(y - 1) = u x - u²/4 - u
        for x, u in [(0.0, 1.0), (2.0, 0.5), (-1.0, 3.0)]:
            expected = u * x - u ** 2 / 4 - u
            assert closed.psi.evaluate(space, np.array([x, u])) == pytest.approx(expected)
        assert closed.domain == ()

    def test_no_closed_form(self, cube_root):
        assert lagrange_closed_form(cube_root) is None


class TestBuilders:
    def test_vf_running_example_is_callable(self, running):
        ref = build_reformulation(running, ReformKind.VF)
        assert not ref.is_algebraic
        assert _roles(ref) == ["lower", "lower"]
        assert ref.constraint_count() == 3
        f_minus_phi = ref.implicit_constraints[0]
        residual = f_minus_phi.evaluate(np.array([[0.0, 1.0], [0.5, 0.5], [0.0, 0.5]]))
        assert residual[:2] == pytest.approx([0.0, 0.0], abs=1e-12)
        assert residual[2] == pytest.approx(0.5)

    def test_vf_without_lower_constraints_is_algebraic(self):
        x, y = var("x"), var("y")
        bp = BilevelProblem(n=1, m=1, p=0, q=0, upper_objective=x + y, upper_constraints=(),
                            lower_objective=(y - x) ** 2, lower_constraints=())
        ref = build_reformulation(bp, "vf")
        assert ref.is_algebraic
        assert _roles(ref) == ["value"]

    def test_kkt_running_example(self, running):
        ref = build_reformulation(running, ReformKind.KKT)
        assert ref.space.names == ("x", "y", "u")
        assert _roles(ref) == [
            "lower", "lower", "multiplier_sign", "multiplier_sign", "complementarity", "stationarity",
        ]
        assert ref.constraint_count() == 6
        assert ref.provenance["u"] is Provenance.IMPLICIT
        assert ref.provenance["x"] is Provenance.ORIGINAL

    def test_kkt_per_component(self, running):
        ref = build_kkt_ref(running, per_component=True)
        assert _roles(ref).count("complementarity") == 2
        assert ref.notes == ("per-component complementarity",)

    def test_kkt_feasible_point(self, running):
        ref = build_reformulation(running, ReformKind.KKT)
        pt = Point.from_blocks(ref.space, {"x": 0.5, "y": 0.5, "u": [1.0, 0.0]})
        rows = [float(e.evaluate(ref.space, pt.values)) for e in ref.nlp.inequalities]
        assert max(rows) <= 0
        for h in ref.nlp.equalities:
            assert float(h.evaluate(ref.space, pt.values)) == pytest.approx(0.0)

    def test_ld_running_example(self, running):
        ref = build_reformulation(running, ReformKind.LD)
        assert _roles(ref) == [
            "lower", "lower", "multiplier_sign", "multiplier_sign", "value", "value_domain",
        ]
        assert ref.constraint_count() == 5
        assert ref.closed_form is not None

    def test_ld_callable_when_psi_has_no_form(self):
        x, y = var("x"), var("y")
        bp = BilevelProblem(n=1, m=1, p=1, q=0, upper_objective=x ** 2 + y ** 2, upper_constraints=(),
                            lower_objective=y ** 4 - x * y, lower_constraints=(y - 1,))
        ref = build_reformulation(bp, ReformKind.LD)
        assert not ref.is_algebraic
        # at x = 0, u = 1: inf_y y⁴ + y - 1 is attained at y = -4^(-1/3)
        y_star = -(0.25 ** (1 / 3))
        psi = y_star ** 4 + y_star - 1
        pt = Point.from_blocks(ref.space, {"x": 0.0, "y": 0.0, "u": [1.0]})
        assert ref.implicit_constraints[0].evaluate(pt.values)[0] == pytest.approx(-psi, rel=1e-6)

    def test_wd_eliminates_z_for_affine_lagrangians(self, running):
        ref = build_reformulation(running, ReformKind.WD)
        assert ref.space.names == ("x", "y", "z", "u")
        assert not ref.uses_block("z")
        assert ref.constraint_count() == 6
        assert "z eliminated" in ref.notes[0]

    def test_wd_keeps_z_otherwise(self):
        ref = build_reformulation(_strictly_convex(), ReformKind.WD)
        assert ref.uses_block("z")
        assert ref.implicit_blocks() == ["z", "u"]

    def test_mwd_running_example(self, running):
        ref = build_reformulation(running, ReformKind.MWD)
        assert _roles(ref) == [
            "lower", "lower", "multiplier_sign", "multiplier_sign", "value", "dual_value", "stationarity",
        ]
        assert ref.constraint_count() == 7

    def test_ge_is_not_a_program(self, running):
        with pytest.raises(CapabilityError):
            build_reformulation(running, ReformKind.GE)

    @pytest.mark.parametrize("kind", ["kkt", "ld", "wd", "mwd"])
    def test_nonconvex_lower_level_rejected(self, cube_root, kind):
        with pytest.raises(InputError, match="convex"):
            build_reformulation(cube_root, kind)

    def test_unknown_kind(self, running):
        with pytest.raises(ValueError):
            build_reformulation(running, "nope")

    @pytest.mark.parametrize(
        "kind", [ReformKind.VF, ReformKind.KKT, ReformKind.LD, ReformKind.WD, ReformKind.MWD],
    )
    def test_counts_match_the_table_on_random_problems(self, kind):
        rng = np.random.default_rng(101)
        seen_unconstrained = False
        for _ in range(50):
            n, m = (int(v) for v in rng.integers(1, 4, size=2))
            p, q = (int(v) for v in rng.integers(0, 4, size=2))
            seen_unconstrained |= p == 0
            bp = _random_problem(rng, n, m, p, q)
            ref = build_reformulation(bp, kind)
            summary = count_summary(bp, kind)
            assert ref.constraint_count() == summary.n_constraints, (n, m, p, q)
            assert ref.space.total_dim == summary.n_vars
            implicit = sum(ref.space.dim(b) for b in ref.implicit_blocks())
            assert implicit == summary.n_implicit_vars
        assert seen_unconstrained

    @pytest.mark.parametrize("kind, expected", [("kkt", 1), ("mwd", 2), ("wd", 2), ("ld", 1), ("vf", 1)])
    def test_unconstrained_lower_level_counts(self, kind, expected):
        x, y = var("x"), var("y")
        bp = BilevelProblem(n=1, m=1, p=0, q=0, upper_objective=x + y, upper_constraints=(),
                            lower_objective=(y - x) ** 2, lower_constraints=())
        assert build_reformulation(bp, kind).constraint_count() == expected
        assert count_summary(bp, kind).n_constraints == expected


class TestGeFeasibility:
    def test_solution_point(self, running):
        report = ge_ref_feasibility(running, [0.5], [0.5])
        assert report.feasible
        assert report.multiplier == pytest.approx([1.0, 0.0])
        assert report.active_set == [0]
        assert report.gcq.verdict == "holds"

    def test_kink(self, running):
        report = ge_ref_feasibility(running, [0.0], [1.0])
        assert report.feasible
        assert sum(report.multiplier) == pytest.approx(1.0)

    def test_interior_point_is_not_a_solution(self, running):
        report = ge_ref_feasibility(running, [0.0], [0.0])
        assert not report.feasible
        assert report.multiplier is None
        assert report.residual == pytest.approx(1.0)

    def test_infeasible_y(self, running):
        with pytest.raises(InputError, match="infeasible"):
            ge_ref_feasibility(running, [0.0], [2.0])

    def test_upper_constraint_violated(self, cube_root):
        with pytest.raises(InputError, match="upper-level"):
            ge_ref_feasibility(cube_root, [-1.0], [0.0])


class TestCounts:
    @pytest.mark.parametrize(
        "dims, kind, expected",
        [
            ((1, 1, 2, 0), "vf", (2, 0, 3)),
            ((1, 1, 2, 0), "ld", (4, 2, 5)),
            ((1, 1, 2, 0), "ge", (2, 0, 1)),
            ((2, 3, 4, 1), "kkt", (9, 4, 13)),
            ((1, 1, 2, 0), "wd", (5, 3, 6)),
            ((1, 1, 2, 0), "mwd", (5, 3, 7)),
        ],
    )
    def test_formulas(self, dims, kind, expected):
        summary = count_summary(dims, kind)
        assert (summary.n_vars, summary.n_implicit_vars, summary.n_constraints) == expected

    def test_accepts_problems_and_dims(self, running):
        assert count_summary(running, "kkt") == count_summary(Dims(1, 1, 2, 0), ReformKind.KKT)

    def test_table_groups(self):
        assert [k.value for k in STANDARD_KINDS] == ["vf", "kkt", "ge"]
        assert [k.value for k in DUAL_KINDS] == ["ld", "wd", "mwd"]

    def test_qualitative_rows(self):
        rows = {row.label: row.entries for row in qualitative_rows(DUAL_KINDS)}
        assert rows["validity of MFCQ"]["wd"] == "×"
        assert set(rows["global equivalence"].values()) == {"✓"}


def _members(ref, batch: np.ndarray, tol: float) -> np.ndarray:
    size = batch.shape[0]
    ok = np.ones(size, dtype=bool)
    for e in ref.nlp.inequalities:
        ok &= np.broadcast_to(e.evaluate(ref.space, batch), (size,)) <= tol
    for e in ref.nlp.equalities:
        ok &= np.abs(np.broadcast_to(e.evaluate(ref.space, batch), (size,))) <= tol
    return ok


def _membership_samples(rng: np.random.Generator, bp: BilevelProblem, per_point: int = 100) -> np.ndarray:
    """Solver KKT points of the lower level and perturbations of them, as (x, y, u) rows."""
    rows = []
    for _ in range(10):
        x = rng.uniform(-1, 1, size=bp.n)
        solved = solve_lower_level(bp, x)
        assert solved.status == "optimal"
        y = np.asarray(solved.point["y"], dtype=np.float64)
        u = np.maximum(np.asarray(solved.multipliers[: bp.p]), 0.0)
        rows.append(np.concatenate([x, y, u]))
        third = (per_point - 1) // 3
        for _ in range(third):
            rows.append(np.concatenate([x, y, u + rng.normal(scale=0.05, size=bp.p)]))
            rows.append(np.concatenate([x, y + rng.normal(scale=0.05, size=bp.m), u]))
            rows.append(np.concatenate([x, rng.uniform(-2, 2, size=bp.m), rng.uniform(-0.5, 2, size=bp.p)]))
    return np.array(rows)


class TestKktAndLagrangeDualAgree:
    def _check(self, rng, bp):
        kkt = build_reformulation(bp, ReformKind.KKT)
        ld = build_reformulation(bp, ReformKind.LD)
        assert ld.is_algebraic
        assert kkt.space == ld.space
        batch = _membership_samples(rng, bp)
        assert batch.shape[0] == 1000
        in_kkt = _members(kkt, batch, 1e-7)
        in_ld = _members(ld, batch, 1e-7)
        assert np.array_equal(in_kkt, in_ld), batch[in_kkt != in_ld][:3]
        assert in_kkt.any()

    def test_running_example(self, running):
        self._check(np.random.default_rng(41), running)

    def test_random_linear_lower_levels(self, random_lower_level):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n, m = (int(v) for v in rng.integers(1, 3, size=2))
            p = int(rng.integers(1, 4))
            self._check(rng, random_lower_level(rng, n, m, p))
