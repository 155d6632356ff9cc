"""Lagrange, Wolfe and Mond–Weir duals and their duality relations."""


import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.core.exceptions import InputError
from app.domain.expr import Point, VarSpace, var
from app.domain.problem import DualKind, Nlp, Sense
from app.services.duality import (
    build_mond_weir_dual,
    build_wolfe_dual,
    check_saddle_point,
    check_strong_duality,
    check_weak_duality,
    converse_duality_certificate,
    lagrange_value_fn,
    wolfe_surrogate_value,
)
from app.services.lower_level import lower_level_nlp

W = VarSpace.of(("w", 1))


def _square() -> Nlp:
    return Nlp(space=W, objective=var("w") ** 2)


class TestLagrangeValue:
    @pytest.mark.parametrize("x", [0.0, 0.5, -0.3])
    def test_running_example_on_the_segment(self, running, x):
        nlp = lower_level_nlp(running, [x])
        for u1 in (0.0, 0.25, 1.0):
            u = [u1, 1.0 - u1]
            value = lagrange_value_fn(nlp, u)
            assert value.finite
            assert value.value == pytest.approx(x * (u[0] - u[1]) - 1.0)

    def test_running_example_off_the_segment(self, running):
        nlp = lower_level_nlp(running, [0.0])
        value = lagrange_value_fn(nlp, [0.2, 0.2])
        assert value.value == -math.inf
        assert value.ray is not None

    def test_negative_multiplier(self, running):
        nlp = lower_level_nlp(running, [0.0])
        assert lagrange_value_fn(nlp, [-1.0, 2.0]).value == -math.inf

    def test_strictly_convex(self):
        value = lagrange_value_fn(_square(), [])
        assert value.value == pytest.approx(0.0)
        assert_allclose(value.minimizer, [0.0])


class TestDualPrograms:
    def test_wolfe_dual_of_running_lower_level(self, running):
        nlp = lower_level_nlp(running, [0.5])
        dual = build_wolfe_dual(nlp)
        assert dual.sense is Sense.MAXIMIZE
        assert dual.space.names == ("z", "u")
        # objective -z + u1(x+z-1) + u2(-x+z-1), stationarity -1 + u1 + u2
        pt = np.array([0.3, 0.4, 0.6])
        assert dual.objective.evaluate(dual.space, pt) == pytest.approx(
            -0.3 + 0.4 * (0.5 + 0.3 - 1) + 0.6 * (-0.5 + 0.3 - 1))
        assert dual.equalities[0].evaluate(dual.space, pt) == pytest.approx(0.0)
        assert dual.n_ineq == 2

    def test_wolfe_dual_of_cube_root_lower_level(self, cube_root):
        nlp = lower_level_nlp(cube_root, [8.0])
        with pytest.raises(InputError):
            build_wolfe_dual(nlp)
        dual = build_wolfe_dual(nlp, require_convex=False)
        z, u1, u2 = -3.0, 0.1, 3.7
        pt = np.array([z, u1, u2])
        assert dual.equalities[0].evaluate(dual.space, pt) == pytest.approx(1 + 3 * u1 * z ** 2 - u2)
        assert dual.objective.evaluate(dual.space, pt) == pytest.approx(z + u1 * (z ** 3 - 8) - u2 * z)

    def test_mond_weir_adds_the_dual_value_row(self, running):
        nlp = lower_level_nlp(running, [0.0])
        wolfe = build_wolfe_dual(nlp)
        mond_weir = build_mond_weir_dual(nlp)
        assert mond_weir.n_ineq == wolfe.n_ineq + 1
        rng = np.random.default_rng(5)
        for pt in rng.uniform(-2, 2, size=(50, 3)):
            q = [float(e.evaluate(mond_weir.space, pt)) for e in mond_weir.inequalities]
            h = [float(e.evaluate(mond_weir.space, pt)) for e in mond_weir.equalities]
            if max(q) <= 0 and max(abs(v) for v in h) <= 1e-12:
                assert all(float(e.evaluate(wolfe.space, pt)) <= 0 for e in wolfe.inequalities)

    def test_unconstrained_program(self):
        dual = build_wolfe_dual(_square())
        assert dual.space.names == ("w_hat",)
        assert dual.objective.evaluate(dual.space, np.array([0.0])) == pytest.approx(0.0)


class TestWeakDuality:
    def test_running_example_lagrange_gap_zero(self, running):
        nlp = lower_level_nlp(running, [0.0])
        report = check_weak_duality(nlp, Point(nlp.space, [1.0]), [0.0, 1.0], DualKind.LAGRANGE)
        assert report.weak_duality_ok
        assert report.primal_value == pytest.approx(-1.0)
        assert report.gap == pytest.approx(0.0, abs=1e-12)

    def test_unconstrained_wolfe(self):
        nlp = _square()
        report = check_weak_duality(nlp, Point(W, [0.0]), [0.0], DualKind.WOLFE)
        assert report.weak_duality_ok
        assert report.gap == pytest.approx(0.0)

    def test_cube_root_counterexample(self, cube_root):
        nlp = lower_level_nlp(cube_root, [8.0])
        dual_pt = Point.from_blocks(VarSpace.of(("z", 1), ("u", 2)), {"z": -3.0, "u": [0.1, 3.7]})
        report = check_weak_duality(nlp, Point(nlp.space, [0.0]), dual_pt, DualKind.WOLFE)
        assert not report.weak_duality_ok
        assert not report.convexity_certified
        assert report.dual_value == pytest.approx(4.6)
        assert report.gap == pytest.approx(-4.6)
        assert report.notes

    def test_cube_root_surrogate(self, cube_root):
        nlp = lower_level_nlp(cube_root, [8.0])
        dual_pt = Point.from_blocks(VarSpace.of(("z", 1), ("u", 2)), {"z": -3.0, "u": [0.1, 3.7]})
        assert wolfe_surrogate_value(nlp, Point(nlp.space, [0.0]), dual_pt) == pytest.approx(-4.6)

    def test_infeasible_dual_point(self, running):
        nlp = lower_level_nlp(running, [0.0])
        dual_pt = Point.from_blocks(VarSpace.of(("z", 1), ("u", 2)), {"z": 0.0, "u": [0.2, 0.2]})
        with pytest.raises(InputError, match="infeasible"):
            check_weak_duality(nlp, Point(nlp.space, [1.0]), dual_pt, DualKind.WOLFE)

    @pytest.mark.parametrize("kind", list(DualKind))
    def test_random_feasible_pairs_on_running_example(self, running, kind):
        rng = np.random.default_rng(17)
        for _ in range(10):
            x = float(rng.uniform(-1, 1))
            nlp = lower_level_nlp(running, [x])
            y = float(rng.uniform(-2, 1 - abs(x)))
            u1 = float(rng.uniform(0, 1))
            u = [u1, 1 - u1]
            if kind is DualKind.LAGRANGE:
                dual_pt = u
            elif kind is DualKind.WOLFE:
                dual_pt = Point(VarSpace.of(("z", 1), ("u", 2)), [float(rng.uniform(-2, 2)), *u])
            else:
                # -u·g(x, z) <= 0 needs z >= 1 + x(u2 - u1)
                z = 1 + x * (u[1] - u[0]) + float(rng.uniform(0, 1))
                dual_pt = Point(VarSpace.of(("z", 1), ("u", 2)), [z, *u])
            report = check_weak_duality(nlp, Point(nlp.space, [y]), dual_pt, kind)
            assert report.weak_duality_ok


class TestStrongDuality:
    @pytest.mark.parametrize("kind", list(DualKind))
    def test_running_example(self, running, kind):
        nlp = lower_level_nlp(running, [0.5])
        report = check_strong_duality(nlp, kind)
        assert report.strong_duality_ok
        assert report.primal_value == pytest.approx(-0.5)
        assert report.slater is not None and report.slater.verdict == "holds"


class TestSaddlePoint:
    def test_kkt_pair(self, running):
        nlp = lower_level_nlp(running, [0.5])
        assert check_saddle_point(nlp, Point(nlp.space, [0.5]), [1.0, 0.0]).is_saddle

    def test_wrong_multiplier(self, running):
        nlp = lower_level_nlp(running, [0.5])
        report = check_saddle_point(nlp, Point(nlp.space, [0.5]), [0.0, 1.0])
        assert not report.is_saddle
        assert report.residual == pytest.approx(1.0)

    def test_unconstrained(self):
        assert check_saddle_point(_square(), Point(W, [0.0]), []).is_saddle


class TestConverseDuality:
    def test_strictly_convex_wolfe(self):
        report = converse_duality_certificate(_square(), Point(W, [0.0]), [], DualKind.WOLFE)
        assert report.verdict == "applies"
        assert not report.counterexample

    def test_affine_lagrangian_is_singular(self, running):
        nlp = lower_level_nlp(running, [0.0])
        report = converse_duality_certificate(nlp, Point(nlp.space, [1.0]), [0.5, 0.5], DualKind.WOLFE)
        assert report.verdict == "not_applicable"
        assert report.min_singular_value == pytest.approx(0.0)

    def test_mond_weir_needs_a_regular_primal(self):
        w = var("w")
        nlp = Nlp(space=W, objective=(w - 1) ** 2, inequalities=(-w,))
        plain = converse_duality_certificate(nlp, Point(W, [1.0]), [0.0], DualKind.MOND_WEIR)
        assert plain.verdict == "not_applicable"
        asserted = converse_duality_certificate(nlp, Point(W, [1.0]), [0.0], DualKind.MOND_WEIR,
                                                assert_regular_primal=True)
        assert asserted.verdict == "applies"
        assert not asserted.counterexample

    def test_cube_root_dual_point_is_a_counterexample(self, cube_root):
        nlp = lower_level_nlp(cube_root, [8.0])
        report = converse_duality_certificate(nlp, Point(nlp.space, [-3.0]), [0.1, 3.7], DualKind.WOLFE)
        assert report.verdict == "applies"
        assert report.counterexample
        assert report.primal_feasible is False


def _random_convex_qp(rng: np.random.Generator) -> tuple[Nlp, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """min ½wᵀHw + cᵀw s.t. Aw - b <= 0 with a strictly feasible centre w0."""
    s, t = (int(v) for v in rng.integers(1, 5, size=2))
    m = rng.normal(size=(s, s))
    h = m.T @ m + np.eye(s)
    c = rng.normal(size=s)
    a = rng.normal(size=(t, s))
    w0 = rng.uniform(-1, 1, size=s)
    b = a @ w0 + rng.uniform(0.5, 1.5, size=t)
    w = [var("w", i) for i in range(s)]
    objective = sum((0.5 * float(h[i, j]) * w[i] * w[j] for i in range(s) for j in range(s)),
                    sum(float(c[i]) * w[i] for i in range(s)))
    inequalities = tuple(sum(float(a[k, j]) * w[j] for j in range(s)) - float(b[k]) for k in range(t))
    nlp = Nlp(space=VarSpace.of(("w", s)), objective=objective, inequalities=inequalities)
    return nlp, h, c, a, b, w0


def _stationary_point(h: np.ndarray, c: np.ndarray, a: np.ndarray, v: np.ndarray) -> np.ndarray:
    return -np.linalg.solve(h, c + a.T @ v)


def _rows(exprs, space: VarSpace, batch: np.ndarray) -> np.ndarray:
    if not exprs:
        return np.zeros((0, batch.shape[0]))
    return np.vstack([np.broadcast_to(e.evaluate(space, batch), (batch.shape[0],)) for e in exprs])


class TestRandomConvexQps:
    def test_weak_and_strong_duality(self):
        rng = np.random.default_rng(31)
        for trial in range(200):
            nlp, h, c, a, b, w0 = _random_convex_qp(rng)
            assert nlp.is_convex
            shifted = w0 + rng.uniform(-0.3, 0.3, size=w0.size)
            primal = Point(nlp.space, shifted if np.all(a @ shifted - b <= 0) else w0)
            dual_space = VarSpace.of(("w_hat", w0.size), ("v", b.size))

            v = rng.uniform(0, 2, size=b.size)
            lagrange = check_weak_duality(nlp, primal, v, DualKind.LAGRANGE, tol=1e-8)
            wolfe_pt = Point(dual_space, np.concatenate([_stationary_point(h, c, a, v), v]))
            wolfe = check_weak_duality(nlp, primal, wolfe_pt, DualKind.WOLFE, tol=1e-8)

            mw_v = np.zeros(b.size)
            for _ in range(20):
                candidate = rng.uniform(0, 2, size=b.size)
                if candidate @ (a @ _stationary_point(h, c, a, candidate) - b) >= 0:
                    mw_v = candidate
                    break
            mw_pt = Point(dual_space, np.concatenate([_stationary_point(h, c, a, mw_v), mw_v]))
            mond_weir = check_weak_duality(nlp, primal, mw_pt, DualKind.MOND_WEIR, tol=1e-8)
            for report in (lagrange, wolfe, mond_weir):
                assert report.weak_duality_ok, (trial, report.kind, report.gap)

            for kind in (DualKind.LAGRANGE, DualKind.WOLFE):
                strong = check_strong_duality(nlp, kind, tol=1e-6)
                assert strong.slater.verdict == "holds"
                assert strong.strong_duality_ok, (trial, kind, strong.gap)

    def test_mond_weir_region_lies_inside_the_wolfe_region(self):
        rng = np.random.default_rng(32)
        for _ in range(200):
            nlp, h, c, a, b, _ = _random_convex_qp(rng)
            wolfe = build_wolfe_dual(nlp)
            mond_weir = build_mond_weir_dual(nlp)
            assert wolfe.space == mond_weir.space
            v = rng.uniform(-0.5, 2, size=(1000, b.size))
            w_hat = -np.linalg.solve(h, (c + v @ a).T).T
            w_hat[500:] += rng.normal(scale=0.1, size=w_hat[500:].shape)
            batch = np.hstack([w_hat, v])
            in_mw = (np.all(_rows(mond_weir.inequalities, mond_weir.space, batch) <= 1e-9, axis=0)
                     & np.all(np.abs(_rows(mond_weir.equalities, mond_weir.space, batch)) <= 1e-9, axis=0))
            in_wolfe = (np.all(_rows(wolfe.inequalities, wolfe.space, batch) <= 1e-9, axis=0)
                        & np.all(np.abs(_rows(wolfe.equalities, wolfe.space, batch)) <= 1e-9, axis=0))
            assert not np.any(in_mw & ~in_wolfe)
