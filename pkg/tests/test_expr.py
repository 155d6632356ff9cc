"""Expressions: spaces, points, evaluation, derivatives and polynomial structure."""


import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.core.exceptions import InputError
from app.domain.expr import (
    MEMO_SIZE,
    Const,
    Point,
    VarSpace,
    affine_parts,
    certify_convex,
    check_space,
    degree,
    derivative,
    is_affine,
    polynomial_terms,
    rename,
    substitute,
    var,
    variables,
)
from app.services.calculus import evaluate, grad, gradient_full, hessian, hessian_full, quadratic_form

XY = VarSpace.of(("x", 1), ("y", 2))


def _random_polynomial(rng: np.random.Generator, depth: int):
    """Random expression tree over XY; powers only wrap subtrees of depth <= 1."""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.2:
            return Const(float(rng.uniform(-2, 2)))
        block, index = [("x", 0), ("y", 0), ("y", 1)][rng.integers(3)]
        return float(rng.uniform(-2, 2)) * var(block, index)
    op = rng.integers(4) if depth <= 2 else rng.integers(3)
    if op == 3:
        return _random_polynomial(rng, min(depth - 1, 1)) ** int(rng.integers(2, 4))
    left = _random_polynomial(rng, depth - 1)
    right = _random_polynomial(rng, depth - 1)
    return (left + right, left - right, left * right)[op]


class TestVarSpace:
    """Block layout and flat indexing."""

    def test_offsets_follow_block_order(self):
        assert XY.total_dim == 3
        assert XY.offset("y") == 1
        assert XY.index("y", 1) == 2
        assert XY.labels() == ["x[0]", "y[0]", "y[1]"]

    def test_zero_dimensional_blocks_are_dropped(self):
        space = VarSpace.of(("x", 1), ("u", 0))
        assert space.names == ("x",)

    def test_duplicate_block_rejected(self):
        with pytest.raises(InputError):
            VarSpace((("x", 1), ("x", 2)))

    def test_unknown_block_lookup(self):
        with pytest.raises(InputError, match="unknown block"):
            XY.dim("z")


class TestPoint:
    def test_from_blocks_and_back(self):
        pt = Point.from_blocks(XY, {"x": 1.5, "y": [2.0, -1.0]})
        assert_allclose(pt.values, [1.5, 2.0, -1.0])
        assert pt.as_dict() == {"x": [1.5], "y": [2.0, -1.0]}

    def test_missing_block(self):
        with pytest.raises(InputError, match="missing"):
            Point.from_blocks(XY, {"x": 0.0})

    def test_wrong_length(self):
        with pytest.raises(InputError):
            Point(XY, [0.0, 1.0])

    def test_values_are_read_only(self):
        pt = Point(XY, [0.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            pt.values[0] = 1.0


class TestEvaluation:
    def test_scalar_and_batch_agree(self):
        x, y0, y1 = var("x"), var("y", 0), var("y", 1)
        e = x * y0 ** 2 - 3 * y1 + 1
        batch = np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]])
        out = e.evaluate(XY, batch)
        assert_allclose(out, [1 * 4 - 9 + 1, 0.5 * 1 + 1])
        assert evaluate(e, Point(XY, batch[0])) == pytest.approx(-4.0)

    def test_constant_broadcasts_over_batch(self):
        out = Const(2.0).evaluate(XY, np.zeros((4, 3)))
        assert np.shape(out) == (4,)

    def test_space_mismatch(self):
        with pytest.raises(InputError, match="space mismatch"):
            check_space(var("z"), XY)


class TestDerivatives:
    def test_gradient_and_hessian(self):
        x, y0, y1 = var("x"), var("y", 0), var("y", 1)
        e = x ** 2 * y0 + y1 ** 3
        pt = Point(XY, [2.0, 3.0, -1.0])
        assert_allclose(grad(e, "x", pt), [12.0])
        assert_allclose(grad(e, "y", pt), [4.0, 3.0])
        assert_allclose(hessian(e, "y", "y", pt), [[0.0, 0.0], [0.0, -6.0]])
        assert_allclose(hessian(e, "x", "y", pt), [[4.0, 0.0]])

    def test_derivative_matches_finite_difference(self):
        rng = np.random.default_rng(7)
        x, y0, y1 = var("x"), var("y", 0), var("y", 1)
        e = (x - y0) ** 3 * y1 + 2 * x * y1 - y0 ** 2
        d = derivative(e, "y", 0)
        for _ in range(20):
            w = rng.normal(size=3)
            h = 1e-6
            bumped = w.copy()
            bumped[1] += h
            fd = (e.evaluate(XY, bumped) - e.evaluate(XY, w)) / h
            assert d.evaluate(XY, w) == pytest.approx(fd, rel=1e-4, abs=1e-4)

    def test_random_polynomials_match_central_differences(self):
        rng = np.random.default_rng(2024)
        h = 1e-5
        for trial in range(500):
            e = _random_polynomial(rng, depth=3)
            w = rng.uniform(-1, 1, size=XY.total_dim)
            pt = Point(XY, w)
            g = gradient_full(e, XY, w)
            hess = hessian_full(e, XY, w)
            for k in range(XY.total_dim):
                step = np.zeros(XY.total_dim)
                step[k] = h
                fd = (e.evaluate(XY, w + step) - e.evaluate(XY, w - step)) / (2 * h)
                assert abs(g[k] - fd) <= 1e-5 * max(1.0, abs(g[k])), (trial, k)
                fd_row = (gradient_full(e, XY, w + step) - gradient_full(e, XY, w - step)) / (2 * h)
                scale = np.maximum(1.0, np.abs(hess[k]))
                assert np.all(np.abs(hess[k] - fd_row) <= 1e-5 * scale), (trial, k)
            assert_allclose(grad(e, "y", pt), g[1:])
            assert_allclose(hessian(e, "x", "y", pt), hess[:1, 1:])

    def test_memo_tables_are_bounded(self):
        for memoised in (derivative, variables):
            assert memoised.cache_info().maxsize == MEMO_SIZE
        x = var("x")
        for k in range(50):
            derivative(x ** 2 + float(k), "x", 0)
        assert derivative.cache_info().currsize <= MEMO_SIZE


class TestStructure:
    def test_polynomial_terms_in_y(self):
        x, y0 = var("x"), var("y", 0)
        terms = polynomial_terms(3 * x * y0 + y0 ** 2 - x, ["y"])
        assert set(terms) == {(), (("y", 0, 1),), (("y", 0, 2),)}
        space = VarSpace.of(("x", 1))
        assert terms[(("y", 0, 1),)].evaluate(space, np.array([2.0])) == pytest.approx(6.0)

    def test_zero_coefficients_dropped(self):
        y0 = var("y", 0)
        assert polynomial_terms(y0 - y0, ["y"]) == {}

    def test_degree_and_affinity(self):
        x, y0 = var("x"), var("y", 0)
        e = x ** 2 * y0 + x
        assert degree(e, ["y"]) == 1
        assert is_affine(e, ["y"])
        assert not is_affine(e, ["x"])

    def test_affine_parts(self):
        x, y0, y1 = var("x"), var("y", 0), var("y", 1)
        constant, coefficients = affine_parts(2 * y0 - x * y1 + 5, "y", 2)
        space = VarSpace.of(("x", 1))
        assert constant.evaluate(space, np.array([1.0])) == pytest.approx(5.0)
        assert coefficients[0].evaluate(space, np.array([1.0])) == pytest.approx(2.0)
        assert coefficients[1].evaluate(space, np.array([3.0])) == pytest.approx(-3.0)
        with pytest.raises(InputError):
            affine_parts(y0 ** 2, "y", 2)

    def test_quadratic_form(self):
        x, y0, y1 = var("x"), var("y", 0), var("y", 1)
        q, c, c0 = quadratic_form(x ** 2 + 2 * y0 * y1 - y1 + 4, XY)
        assert_allclose(q, [[2, 0, 0], [0, 0, 2], [0, 2, 0]])
        assert_allclose(c, [0, 0, -1])
        assert c0 == pytest.approx(4.0)
        assert quadratic_form(y0 ** 3, XY) is None


class TestConvexityCertificate:
    @pytest.mark.parametrize(
        "build, expected",
        [
            (lambda x, y: y ** 2 + x * y, True),
            (lambda x, y: (x + y - 1) ** 4, True),
            (lambda x, y: -(y ** 2), False),
            (lambda x, y: y ** 3 - x, False),
            (lambda x, y: x * (y - 1), True),
        ],
    )
    def test_in_y(self, build, expected):
        space = VarSpace.of(("x", 1), ("y", 1))
        assert certify_convex(build(var("x"), var("y")), ["y"], space) is expected


class TestRewriting:
    def test_substitute_fixes_a_block(self):
        x, y0 = var("x"), var("y", 0)
        e = substitute(x * y0 + x, "x", [2.0])
        space = VarSpace.of(("y", 1))
        assert e.evaluate(space, np.array([3.0])) == pytest.approx(8.0)

    def test_rename_moves_block(self):
        e = rename(var("y") ** 2, {"y": "z"})
        assert e.to_sexpr() == "(pow (var z 0) 2)"
