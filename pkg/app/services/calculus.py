"""Numeric evaluation of expressions and their exact derivatives at Points."""


import numpy as np

from app.core.exceptions import InputError
from app.domain.expr import (
    Const,
    Expr,
    Point,
    VarSpace,
    check_space,
    derivative,
    monomial_degree,
    polynomial_terms,
    quadratic_matrix,
)

__all__ = [
    "evaluate",
    "grad",
    "hessian",
    "gradient_full",
    "jacobian",
    "hessian_full",
    "values_at",
    "affine_rows",
    "quadratic_form",
]


def _require_block(space: VarSpace, block: str) -> None:
    if not space.has(block):
        raise InputError(f"unknown block '{block}'")


def evaluate(e: Expr, pt: Point) -> float:
    """Value of ``e`` at ``pt``; raises InputError on a space mismatch."""
    check_space(e, pt.space)
    return float(e.evaluate(pt.space, pt.values))


def grad(e: Expr, block: str, pt: Point) -> np.ndarray:
    """∂e/∂(block) at ``pt``."""
    _require_block(pt.space, block)
    check_space(e, pt.space)
    dim = pt.space.dim(block)
    return np.array([derivative(e, block, i).evaluate(pt.space, pt.values) for i in range(dim)])


def hessian(e: Expr, block_a: str, block_b: str, pt: Point) -> np.ndarray:
    """Mixed second derivatives ∂²e/∂(block_a)∂(block_b) at ``pt``."""
    _require_block(pt.space, block_a)
    _require_block(pt.space, block_b)
    check_space(e, pt.space)
    rows, cols = pt.space.dim(block_a), pt.space.dim(block_b)
    out = np.empty((rows, cols))
    for i in range(rows):
        d_i = derivative(e, block_a, i)
        for j in range(cols):
            out[i, j] = derivative(d_i, block_b, j).evaluate(pt.space, pt.values)
    return out


def gradient_full(e: Expr, space: VarSpace, values: np.ndarray) -> np.ndarray:
    """Gradient over every coordinate of ``space`` (flat ordering)."""
    return np.array([
        derivative(e, block, i).evaluate(space, values)
        for block, dim in space.blocks
        for i in range(dim)
    ])


def jacobian(exprs: tuple[Expr, ...] | list[Expr], space: VarSpace, values: np.ndarray) -> np.ndarray:
    if not exprs:
        return np.zeros((0, space.total_dim))
    return np.vstack([gradient_full(e, space, values) for e in exprs])


def hessian_full(e: Expr, space: VarSpace, values: np.ndarray) -> np.ndarray:
    coords = [(block, i) for block, dim in space.blocks for i in range(dim)]
    size = len(coords)
    out = np.empty((size, size))
    for a, (block_a, i) in enumerate(coords):
        d_a = derivative(e, block_a, i)
        for b in range(a, size):
            block_b, j = coords[b]
            out[a, b] = out[b, a] = derivative(d_a, block_b, j).evaluate(space, values)
    return out


def values_at(exprs: tuple[Expr, ...] | list[Expr], space: VarSpace, values: np.ndarray) -> np.ndarray:
    return np.array([float(e.evaluate(space, values)) for e in exprs])


def affine_rows(exprs: tuple[Expr, ...] | list[Expr], space: VarSpace) -> tuple[np.ndarray, np.ndarray]:
    """``(A, b)`` with ``e_i(w) = A_i w - b_i`` for expressions affine over all of ``space``."""
    a = np.zeros((len(exprs), space.total_dim))
    b = np.zeros(len(exprs))
    for i, e in enumerate(exprs):
        check_space(e, space)
        for mono, coef in polynomial_terms(e, space.names).items():
            if not isinstance(coef, Const):
                raise InputError("coefficient is not constant over the space")
            if not mono:
                b[i] = -coef.value
            elif len(mono) == 1 and mono[0][2] == 1:
                block, index, _ = mono[0]
                a[i, space.index(block, index)] += coef.value
            else:
                raise InputError(f"expression {e} is not affine")
    return a, b


def quadratic_form(e: Expr, space: VarSpace) -> tuple[np.ndarray, np.ndarray, float] | None:
    """``(Q, c, c0)`` with ``e(w) = ½wᵀQw + cᵀw + c0``, or None above degree two."""
    terms = polynomial_terms(e, space.names)
    if any(monomial_degree(m) > 2 for m in terms):
        return None
    q = quadratic_matrix(terms, space)
    if q is None:
        return None
    c = np.zeros(space.total_dim)
    c0 = 0.0
    for mono, coef in terms.items():
        if not isinstance(coef, Const):
            return None
        if not mono:
            c0 = coef.value
        elif monomial_degree(mono) == 1:
            block, index, _ = mono[0]
            c[space.index(block, index)] += coef.value
    return q, c, c0
