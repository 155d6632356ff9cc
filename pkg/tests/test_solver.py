"""LP wrapper, polyhedra, the convex solver and the lower-level helpers."""


import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.core.exceptions import CapabilityError, InputError
from app.domain.expr import Point, VarSpace, var
from app.domain.problem import BilevelProblem, MultiplierPolyhedron, Nlp, Polyhedron, Sense
from app.services.lower_level import (
    kkt_residual,
    lagrangian,
    lower_level_nlp,
    multiplier_set,
    solution_membership,
    solve_lower_level,
    value_function,
)
from app.services.lp import recession_direction, solve_lp
from app.services.polyhedra import enumerate_vertices, polyhedral_normal_cone, polyhedron_vertices
from app.services.solver import _verified_ray, solve_convex

Y = VarSpace.of(("y", 1))
Y2 = VarSpace.of(("y", 2))


def _sorted(vectors) -> list[list[float]]:
    return sorted(np.round(np.asarray(v, dtype=float), 9).tolist() for v in vectors)


class TestSolveLp:
    def test_optimum_and_duals(self):
        # min -y1 - y2 s.t. y1 + y2 <= 1, y >= 0
        res = solve_lp([-1.0, -1.0], [[1.0, 1.0]], [1.0], bounds=[(0, None), (0, None)])
        assert res.ok
        assert res.fun == pytest.approx(-1.0)
        assert res.ineq_duals[0] == pytest.approx(-1.0)

    def test_infeasible(self):
        res = solve_lp([1.0], [[1.0], [-1.0]], [-1.0, -1.0])
        assert res.status == "infeasible"

    def test_recession_direction(self):
        d = recession_direction([-1.0, 0.0], [[-1.0, 0.0]], None)
        assert d is not None
        assert d[0] > 0
        assert recession_direction([1.0, 0.0], [[-1.0, 0.0]], None) is None


class TestEnumerateVertices:
    def test_unit_simplex(self):
        poly = Polyhedron(
            eq_matrix=[[1.0, 1.0]], eq_rhs=[1.0],
            ineq_matrix=-np.eye(2), ineq_rhs=np.zeros(2), labels=("a", "b"),
        )
        enum = enumerate_vertices(poly)
        assert _sorted(enum.vertices) == [[0.0, 1.0], [1.0, 0.0]]
        assert enum.bounded
        assert enum.edges == [(0, 1)]

    def test_orthant_has_rays(self):
        poly = Polyhedron(
            eq_matrix=np.zeros((0, 2)), eq_rhs=[], ineq_matrix=-np.eye(2), ineq_rhs=np.zeros(2),
            labels=("a", "b"),
        )
        enum = enumerate_vertices(poly)
        assert _sorted(enum.vertices) == [[0.0, 0.0]]
        assert _sorted(enum.rays) == [[0.0, 1.0], [1.0, 0.0]]
        assert not enum.lineality

    def test_half_plane_has_lineality(self):
        poly = Polyhedron(
            eq_matrix=np.zeros((0, 2)), eq_rhs=[], ineq_matrix=[[-1.0, 0.0]], ineq_rhs=[0.0],
            labels=("a", "b"),
        )
        enum = enumerate_vertices(poly)
        assert len(enum.lineality) == 1
        assert_allclose(np.abs(enum.lineality[0]), [0.0, 1.0])
        assert _sorted(enum.vertices) == [[0.0, 0.0]]
        assert _sorted(enum.rays) == [[1.0, 0.0]]

    def test_empty(self):
        poly = Polyhedron(
            eq_matrix=[[1.0]], eq_rhs=[-1.0], ineq_matrix=[[-1.0]], ineq_rhs=[0.0], labels=("a",),
        )
        assert enumerate_vertices(poly).empty

    def test_dimension_cap(self):
        poly = Polyhedron(
            eq_matrix=np.zeros((0, 3)), eq_rhs=[], ineq_matrix=-np.eye(3), ineq_rhs=np.zeros(3),
            labels=("a", "b", "c"),
        )
        with pytest.raises(CapabilityError):
            enumerate_vertices(poly, dim_cap=2)

    def test_multiplier_polyhedron_embeds_inactive_zeros(self):
        mp = MultiplierPolyhedron(
            active_index_set=(0, 2), equality_matrix=np.array([[1.0, 5.0, 1.0]]),
            rhs=np.array([1.0]), p=3,
        )
        enum = polyhedron_vertices(mp)
        assert _sorted(enum.vertices) == [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]


class TestNormalCone:
    def test_active_rows_generate(self):
        cone = polyhedral_normal_cone(np.array([[1.0, 1.0], [-1.0, 1.0]]), np.array([1.0, 1.0]),
                                      None, None, np.array([0.0, 1.0]))
        assert cone.generators == [[1.0, 1.0], [-1.0, 1.0]]

    def test_infeasible_point(self):
        with pytest.raises(InputError):
            polyhedral_normal_cone(np.array([[1.0]]), np.array([0.0]), None, None, np.array([1.0]))


class TestSolveConvex:
    def test_lp(self):
        y0, y1 = var("y", 0), var("y", 1)
        nlp = Nlp(space=Y2, objective=-y0 - 2 * y1,
                  inequalities=(y0 + y1 - 1, -y0, -y1))
        report = solve_convex(nlp)
        assert report.status == "optimal"
        assert_allclose(report.flat(Y2), [0.0, 1.0], atol=1e-9)
        assert report.value == pytest.approx(-2.0)
        assert report.kkt_residual <= 1e-8

    def test_qp_with_active_bound(self):
        y = var("y")
        nlp = Nlp(space=Y, objective=(y - 2) ** 2, inequalities=(y - 1,))
        report = solve_convex(nlp)
        assert report.status == "optimal"
        assert report.flat(Y)[0] == pytest.approx(1.0)
        assert report.multipliers[0] == pytest.approx(2.0)

    def test_nonlinear_constraint(self):
        y = var("y")
        nlp = Nlp(space=Y, objective=y, inequalities=(y ** 2 - 1,))
        report = solve_convex(nlp)
        assert report.status in ("optimal", "tolerance_reached")
        assert report.flat(Y)[0] == pytest.approx(-1.0, abs=1e-5)

    def test_maximize(self):
        y = var("y")
        nlp = Nlp(space=Y, objective=y, inequalities=(y - 3,), sense=Sense.MAXIMIZE)
        report = solve_convex(nlp)
        assert report.value == pytest.approx(3.0)

    def test_unbounded_with_ray(self):
        y = var("y")
        report = solve_convex(Nlp(space=Y, objective=-y, inequalities=(-y,)))
        assert report.status == "unbounded"
        assert report.ray is not None and report.ray[0] > 0

    def test_infeasible(self):
        y = var("y")
        report = solve_convex(Nlp(space=Y, objective=y, inequalities=(y - 1, 2 - y)))
        assert report.status == "infeasible"

    def test_empty_qp_region_is_infeasible_despite_a_descent_ray(self):
        y0, y1 = var("y", 0), var("y", 1)
        nlp = Nlp(space=Y2, objective=y0 ** 2 - y1, inequalities=(y0 + 1, -y0 + 1))
        report = solve_convex(nlp)
        assert report.status == "infeasible"
        assert report.value == math.inf
        assert report.ray is None

    def test_empty_lp_region_is_infeasible_despite_a_descent_ray(self):
        y0, y1 = var("y", 0), var("y", 1)
        report = solve_convex(Nlp(space=Y2, objective=-y1, inequalities=(y0 + 1, -y0 + 1)))
        assert report.status == "infeasible"

    def test_empty_nonlinear_region_is_infeasible(self):
        y0, y1 = var("y", 0), var("y", 1)
        report = solve_convex(Nlp(space=Y2, objective=-y1, inequalities=(y0 ** 2 + 1,)))
        assert report.status == "infeasible"

    def test_barrier_rays_are_checked_against_the_constraints(self):
        y0, y1 = var("y", 0), var("y", 1)
        nlp = Nlp(space=Y2, objective=-y1, inequalities=(y0 ** 2 - 1, y1 - 5))
        origin = np.array([0.0, 0.0])
        assert _verified_ray(nlp, nlp.objective, origin, np.array([0.0, 3.0]), np.zeros((0, 2)), 1e-8) is None
        free = Nlp(space=Y2, objective=-y1, inequalities=(y0 ** 2 - 1,))
        ray = _verified_ray(free, free.objective, origin, np.array([0.0, 4.0]), np.zeros((0, 2)), 1e-8)
        assert_allclose(ray, [0.0, 1.0])

    def test_rejects_uncertified_program(self):
        y = var("y")
        with pytest.raises(InputError):
            solve_convex(Nlp(space=Y, objective=-(y ** 2), inequalities=(y - 1, -y - 1)))

    def test_random_qps_satisfy_kkt(self):
        rng = np.random.default_rng(2024)
        y0, y1 = var("y", 0), var("y", 1)
        for _ in range(10):
            a, b = (float(v) for v in rng.uniform(-2, 2, size=2))
            c = float(rng.uniform(0.5, 2.0))
            nlp = Nlp(space=Y2, objective=(y0 - a) ** 2 + c * (y1 - b) ** 2,
                      inequalities=(y0 + y1 - 1, -y0 - 1, -y1 - 1))
            report = solve_convex(nlp)
            assert report.status == "optimal"
            assert report.kkt_residual <= 1e-8


class TestLowerLevel:
    def test_lagrangian_is_f_without_constraints(self):
        x, y = var("x"), var("y")
        bp = BilevelProblem(n=1, m=1, p=0, q=0, upper_objective=x + y, upper_constraints=(),
                            lower_objective=(y - x) ** 2, lower_constraints=())
        assert lagrangian(bp) is bp.lower_objective
        assert value_function(bp, [3.0]) == pytest.approx(0.0, abs=1e-10)

    @pytest.mark.parametrize("x, expected", [(0.0, -1.0), (0.5, -0.5), (-0.75, -0.25)])
    def test_value_function_of_running_example(self, running, x, expected):
        assert value_function(running, [x]) == pytest.approx(expected, abs=1e-9)

    def test_solution_membership(self, running):
        assert solution_membership(running, [0.0], [1.0])
        assert not solution_membership(running, [0.0], [0.5])
        assert not solution_membership(running, [0.0], [2.0])

    def test_value_function_infeasible(self):
        x, y = var("x"), var("y")
        bp = BilevelProblem(n=1, m=1, p=2, q=0, upper_objective=y, upper_constraints=(),
                            lower_objective=y, lower_constraints=(y - x, 1 - y))
        assert value_function(bp, [0.0]) == math.inf
        assert value_function(bp, [2.0]) == pytest.approx(1.0)

    def test_value_function_is_plus_infinity_on_an_empty_qp_region(self):
        x, y0, y1 = var("x"), var("y", 0), var("y", 1)
        bp = BilevelProblem(n=1, m=2, p=2, q=0, upper_objective=x, upper_constraints=(),
                            lower_objective=y0 ** 2 - y1, lower_constraints=(y0 + 1, -y0 + 1))
        assert solve_lower_level(bp, [0.0]).status == "infeasible"
        assert value_function(bp, [0.0]) == math.inf

    def test_multiplier_set_at_the_kink(self, running):
        mp = multiplier_set(running, [0.0], [1.0])
        assert mp.active_index_set == (0, 1)
        assert_allclose(mp.equality_matrix, [[1.0, 1.0]])
        assert_allclose(mp.rhs, [1.0])
        assert mp.contains(np.array([0.3, 0.7]), 1e-9)
        assert not mp.contains(np.array([1.0, 1.0]), 1e-9)

    def test_multiplier_set_off_the_kink(self, running):
        mp = multiplier_set(running, [0.5], [0.5])
        assert mp.active_index_set == (0,)
        assert _sorted(polyhedron_vertices(mp).vertices) == [[1.0, 0.0]]

    def test_multiplier_set_rejects_infeasible_y(self, running):
        with pytest.raises(InputError, match="infeasible"):
            multiplier_set(running, [0.0], [2.0])

    def test_kkt_residual(self, running):
        nlp = lower_level_nlp(running, [0.0])
        assert kkt_residual(nlp, Point(nlp.space, [1.0]), [0.5, 0.5]) == pytest.approx(0.0)
        assert kkt_residual(nlp, Point(nlp.space, [1.0]), [1.0, 1.0]) == pytest.approx(1.0)
