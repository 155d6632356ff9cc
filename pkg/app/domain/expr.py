"""Polynomial expressions over named variable blocks.

Nodes are immutable and hashed by identity, so derived expressions
(derivatives, substitutions) can be memoised per node.  Evaluation is
vectorised: ``values`` may be a flat point of length ``total_dim`` or a
batch of shape ``(N, total_dim)``.

Structure helpers at the bottom (``polynomial_terms``, ``degree``,
``certify_convex``) give the exact affine/quadratic detection used by the
closed forms in the reformulation and duality services.
"""


from __future__ import annotations

import functools
import re
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from app.core.exceptions import InputError

_IDENTIFIER = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

# entries per memoised traversal; old nodes are evicted least-recently-used first
MEMO_SIZE = 1 << 16

# ---------------------------------------------------------------------------
# Variable spaces and points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VarSpace:
    """Ordered named blocks; block order fixes the flat indexing."""

    blocks: tuple[tuple[str, int], ...]
    _offsets: dict[str, tuple[int, int]] = field(
        init=False, repr=False, compare=False, hash=False,
    )

    def __post_init__(self) -> None:
        offsets: dict[str, tuple[int, int]] = {}
        start = 0
        for name, dim in self.blocks:
            if not _IDENTIFIER.match(name):
                raise InputError(f"invalid block name '{name}'")
            if name in offsets:
                raise InputError(f"duplicate block '{name}'")
            if int(dim) <= 0:
                raise InputError(f"block '{name}' must have positive dimension, got {dim}")
            offsets[name] = (start, int(dim))
            start += int(dim)
        object.__setattr__(self, "_offsets", offsets)

    @classmethod
    def of(cls, *blocks: tuple[str, int]) -> VarSpace:
        """Build a space, silently dropping zero-dimensional blocks."""
        return cls(tuple((name, int(dim)) for name, dim in blocks if int(dim) > 0))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.blocks)

    @property
    def total_dim(self) -> int:
        return sum(dim for _, dim in self.blocks)

    def has(self, block: str) -> bool:
        return block in self._offsets

    def dim(self, block: str) -> int:
        return self._lookup(block)[1]

    def offset(self, block: str) -> int:
        return self._lookup(block)[0]

    def slice(self, block: str) -> slice:
        start, dim = self._lookup(block)
        return slice(start, start + dim)

    def index(self, block: str, i: int) -> int:
        start, dim = self._lookup(block)
        if not 0 <= i < dim:
            raise InputError(f"index {i} out of range for block '{block}' of dimension {dim}")
        return start + i

    def labels(self) -> list[str]:
        return [f"{name}[{i}]" for name, dim in self.blocks for i in range(dim)]

    def extend(self, *blocks: tuple[str, int]) -> VarSpace:
        return VarSpace.of(*self.blocks, *blocks)

    def split(self, values: np.ndarray) -> dict[str, np.ndarray]:
        return {name: np.asarray(values)[..., self.slice(name)] for name in self.names}

    def _lookup(self, block: str) -> tuple[int, int]:
        try:
            return self._offsets[block]
        except KeyError:
            raise InputError(
                f"unknown block '{block}' (space has {', '.join(self.names) or 'no blocks'})"
            ) from None


@dataclass(frozen=True, eq=False)
class Point:
    """A flat float64 vector attached to a VarSpace."""

    space: VarSpace
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64).reshape(-1)
        if arr.shape != (self.space.total_dim,):
            raise InputError(
                f"point has {arr.size} values, space expects {self.space.total_dim}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_blocks(cls, space: VarSpace, blocks: Mapping[str, Sequence[float] | float]) -> Point:
        values = np.zeros(space.total_dim)
        missing = [name for name in space.names if name not in blocks]
        if missing:
            raise InputError(f"point is missing block(s) {', '.join(missing)}")
        extra = [name for name in blocks if not space.has(name)]
        if extra:
            raise InputError(f"point has unknown block(s) {', '.join(extra)}")
        for name in space.names:
            block = np.atleast_1d(np.asarray(blocks[name], dtype=np.float64))
            if block.size != space.dim(name):
                raise InputError(
                    f"block '{name}' has {block.size} values, expected {space.dim(name)}"
                )
            values[space.slice(name)] = block
        return cls(space, values)

    def block(self, name: str) -> np.ndarray:
        return self.values[self.space.slice(name)]

    def as_dict(self) -> dict[str, list[float]]:
        return {name: self.block(name).tolist() for name in self.space.names}


# ---------------------------------------------------------------------------
# Expression nodes
# ---------------------------------------------------------------------------


class Expr:
    """Base node.  Arithmetic operators build folded expressions."""

    __slots__ = ()

    def __add__(self, other: Expr | float) -> Expr:
        return add(self, as_expr(other))

    def __radd__(self, other: Expr | float) -> Expr:
        return add(as_expr(other), self)

    def __sub__(self, other: Expr | float) -> Expr:
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other: Expr | float) -> Expr:
        return add(as_expr(other), neg(self))

    def __mul__(self, other: Expr | float) -> Expr:
        return mul(self, as_expr(other))

    def __rmul__(self, other: Expr | float) -> Expr:
        return mul(as_expr(other), self)

    def __neg__(self) -> Expr:
        return neg(self)

    def __pow__(self, exponent: int) -> Expr:
        return power(self, exponent)

    def __str__(self) -> str:
        return self.to_sexpr()

    def evaluate(self, space: VarSpace, values: np.ndarray) -> np.ndarray | float:
        """Evaluate at a flat point (returns float) or a batch (returns array)."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape[-1] != space.total_dim:
            raise InputError(
                f"value vector has length {arr.shape[-1]}, space expects {space.total_dim}"
            )
        check_space(self, space)
        result = np.broadcast_to(self._eval(space, arr), arr.shape[:-1])
        if arr.ndim == 1:
            return float(result)
        return np.array(result, dtype=np.float64)

    def _eval(self, space: VarSpace, values: np.ndarray) -> np.ndarray | float:
        raise NotImplementedError

    def to_sexpr(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True, eq=False, slots=True)
class Const(Expr):
    value: float

    def _eval(self, space, values):
        return self.value

    def to_sexpr(self) -> str:
        return f"(const {format_number(self.value)})"


@dataclass(frozen=True, eq=False, slots=True)
class Var(Expr):
    block: str
    index: int

    def _eval(self, space, values):
        return values[..., space.index(self.block, self.index)]

    def to_sexpr(self) -> str:
        return f"(var {self.block} {self.index})"


@dataclass(frozen=True, eq=False, slots=True)
class Add(Expr):
    terms: tuple[Expr, ...]

    def _eval(self, space, values):
        total = 0.0
        for term in self.terms:
            total = total + term._eval(space, values)
        return total

    def to_sexpr(self) -> str:
        return "(+ " + " ".join(t.to_sexpr() for t in self.terms) + ")"


@dataclass(frozen=True, eq=False, slots=True)
class Mul(Expr):
    factors: tuple[Expr, ...]

    def _eval(self, space, values):
        prod = 1.0
        for factor in self.factors:
            prod = prod * factor._eval(space, values)
        return prod

    def to_sexpr(self) -> str:
        return "(* " + " ".join(f.to_sexpr() for f in self.factors) + ")"


@dataclass(frozen=True, eq=False, slots=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def _eval(self, space, values):
        return self.base._eval(space, values) ** self.exponent

    def to_sexpr(self) -> str:
        return f"(pow {self.base.to_sexpr()} {self.exponent})"


@dataclass(frozen=True, eq=False, slots=True)
class Neg(Expr):
    child: Expr

    def _eval(self, space, values):
        return -self.child._eval(space, values)

    def to_sexpr(self) -> str:
        return f"(neg {self.child.to_sexpr()})"


ZERO = Const(0.0)
ONE = Const(1.0)


def format_number(value: float) -> str:
    """Integers print without a trailing ``.0``; everything else round-trips via repr."""
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


# ---------------------------------------------------------------------------
# Folding constructors
# ---------------------------------------------------------------------------


def as_expr(value: Expr | float | int) -> Expr:
    if isinstance(value, Expr):
        return value
    return Const(float(value))


def const(value: float) -> Const:
    return Const(float(value))


def var(block: str, index: int = 0) -> Var:
    return Var(block, int(index))


def block_vars(block: str, dim: int) -> list[Var]:
    return [Var(block, i) for i in range(dim)]


def is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def add(*terms: Expr) -> Expr:
    flat: list[Expr] = []
    constant = 0.0
    for term in terms:
        parts = term.terms if isinstance(term, Add) else (term,)
        for part in parts:
            if isinstance(part, Const):
                constant += part.value
            else:
                flat.append(part)
    if constant != 0.0 or not flat:
        flat.append(Const(constant))
    if len(flat) == 1:
        return flat[0]
    return Add(tuple(flat))


def mul(*factors: Expr) -> Expr:
    flat: list[Expr] = []
    constant = 1.0
    for factor in factors:
        parts = factor.factors if isinstance(factor, Mul) else (factor,)
        for part in parts:
            if isinstance(part, Const):
                constant *= part.value
            else:
                flat.append(part)
    if constant == 0.0:
        return ZERO
    if not flat:
        return Const(constant)
    if constant == -1.0:
        return neg(flat[0] if len(flat) == 1 else Mul(tuple(flat)))
    if constant != 1.0:
        flat.insert(0, Const(constant))
    if len(flat) == 1:
        return flat[0]
    return Mul(tuple(flat))


def neg(e: Expr) -> Expr:
    if isinstance(e, Const):
        return Const(-e.value)
    if isinstance(e, Neg):
        return e.child
    return Neg(e)


def power(base: Expr, exponent: int) -> Expr:
    if int(exponent) != exponent or exponent < 0:
        raise InputError(f"exponent must be a non-negative integer, got {exponent}")
    exponent = int(exponent)
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if isinstance(base, Const):
        return Const(base.value**exponent)
    return Pow(base, exponent)


def sub(a: Expr, b: Expr) -> Expr:
    return add(a, neg(b))


def dot(coefficients: Sequence[Expr], exprs: Sequence[Expr]) -> Expr:
    return add(*(mul(c, e) for c, e in zip(coefficients, exprs, strict=True)))


# ---------------------------------------------------------------------------
# Traversal
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=MEMO_SIZE)
def variables(e: Expr) -> frozenset[tuple[str, int]]:
    match e:
        case Const():
            return frozenset()
        case Var(block, index):
            return frozenset({(block, index)})
        case Add(terms):
            return frozenset().union(*(variables(t) for t in terms))
        case Mul(factors):
            return frozenset().union(*(variables(f) for f in factors))
        case Pow(base, _):
            return variables(base)
        case Neg(child):
            return variables(child)
    raise TypeError(f"unknown node {type(e).__name__}")


def blocks_of(e: Expr) -> frozenset[str]:
    return frozenset(block for block, _ in variables(e))


def check_space(e: Expr, space: VarSpace) -> None:
    """Raise InputError when ``e`` references a variable outside ``space``."""
    for block, index in variables(e):
        if not space.has(block) or index >= space.dim(block):
            raise InputError(
                f"space mismatch: expression uses ({block}, {index}) "
                f"but space has {dict(space.blocks)}"
            )


def transform(e: Expr, leaf: Callable[[Var], Expr]) -> Expr:
    """Rebuild ``e`` bottom-up with ``leaf`` applied to every variable."""
    memo: dict[int, Expr] = {}

    def walk(node: Expr) -> Expr:
        key = id(node)
        if key in memo:
            return memo[key]
        match node:
            case Const():
                out: Expr = node
            case Var():
                out = leaf(node)
            case Add(terms):
                out = add(*(walk(t) for t in terms))
            case Mul(factors):
                out = mul(*(walk(f) for f in factors))
            case Pow(base, exponent):
                out = power(walk(base), exponent)
            case Neg(child):
                out = neg(walk(child))
            case _:
                raise TypeError(f"unknown node {type(node).__name__}")
        memo[key] = out
        return out

    return walk(e)


def substitute(e: Expr, block: str, values: Sequence[float] | np.ndarray) -> Expr:
    """Replace every ``(var block i)`` by the constant ``values[i]``."""
    vals = np.atleast_1d(np.asarray(values, dtype=np.float64))

    def leaf(v: Var) -> Expr:
        if v.block != block:
            return v
        if v.index >= vals.size:
            raise InputError(f"no value for ({block}, {v.index})")
        return Const(float(vals[v.index]))

    return transform(e, leaf)


def substitute_exprs(e: Expr, block: str, exprs: Sequence[Expr]) -> Expr:
    """Replace every ``(var block i)`` by ``exprs[i]``."""
    return transform(e, lambda v: exprs[v.index] if v.block == block else v)


def rename(e: Expr, mapping: Mapping[str, str]) -> Expr:
    return transform(e, lambda v: Var(mapping[v.block], v.index) if v.block in mapping else v)


# ---------------------------------------------------------------------------
# Symbolic differentiation
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=MEMO_SIZE)
def derivative(e: Expr, block: str, index: int) -> Expr:
    """Exact partial derivative with respect to ``(var block index)``."""
    match e:
        case Const():
            return ZERO
        case Var(b, i):
            return ONE if (b, i) == (block, index) else ZERO
        case Add(terms):
            return add(*(derivative(t, block, index) for t in terms))
        case Mul(factors):
            pieces = []
            for k, factor in enumerate(factors):
                d = derivative(factor, block, index)
                if is_const(d, 0.0):
                    continue
                pieces.append(mul(*factors[:k], d, *factors[k + 1:]))
            return add(*pieces) if pieces else ZERO
        case Pow(base, exponent):
            d = derivative(base, block, index)
            if is_const(d, 0.0):
                return ZERO
            return mul(Const(float(exponent)), power(base, exponent - 1), d)
        case Neg(child):
            return neg(derivative(child, block, index))
    raise TypeError(f"unknown node {type(e).__name__}")


def gradient_exprs(e: Expr, block: str, dim: int) -> list[Expr]:
    return [derivative(e, block, i) for i in range(dim)]


# ---------------------------------------------------------------------------
# Polynomial structure
# ---------------------------------------------------------------------------

Monomial = tuple[tuple[str, int, int], ...]  # sorted (block, index, power)


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    powers: dict[tuple[str, int], int] = {}
    for block, index, k in (*a, *b):
        powers[(block, index)] = powers.get((block, index), 0) + k
    return tuple(sorted((block, index, k) for (block, index), k in powers.items()))


def _poly_add(target: dict[Monomial, Expr], source: Mapping[Monomial, Expr]) -> None:
    for mono, coef in source.items():
        target[mono] = add(target[mono], coef) if mono in target else coef


def _poly_mul(a: Mapping[Monomial, Expr], b: Mapping[Monomial, Expr]) -> dict[Monomial, Expr]:
    out: dict[Monomial, Expr] = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            _poly_add(out, {_mono_mul(ma, mb): mul(ca, cb)})
    return out


def polynomial_terms(e: Expr, blocks: Iterable[str]) -> dict[Monomial, Expr]:
    """Expand ``e`` as a polynomial in the variables of ``blocks``.

    Keys are monomials in those variables, values are coefficient
    expressions in the remaining variables.  Folded zero coefficients are
    dropped.
    """
    wanted = frozenset(blocks)
    memo: dict[int, dict[Monomial, Expr]] = {}

    def walk(node: Expr) -> dict[Monomial, Expr]:
        key = id(node)
        if key in memo:
            return memo[key]
        match node:
            case Const(value):
                out = {(): node} if value != 0.0 else {}
            case Var(block, index):
                out = {((block, index, 1),): ONE} if block in wanted else {(): node}
            case Add(terms):
                out = {}
                for t in terms:
                    _poly_add(out, walk(t))
            case Mul(factors):
                out = {(): ONE}
                for f in factors:
                    out = _poly_mul(out, walk(f))
            case Pow(base, exponent):
                base_terms = walk(base)
                out = {(): ONE}
                for _ in range(exponent):
                    out = _poly_mul(out, base_terms)
            case Neg(child):
                out = {mono: neg(coef) for mono, coef in walk(child).items()}
            case _:
                raise TypeError(f"unknown node {type(node).__name__}")
        out = {mono: coef for mono, coef in out.items() if not is_const(coef, 0.0)}
        memo[key] = out
        return out

    return walk(e)


def monomial_degree(mono: Monomial) -> int:
    return sum(k for _, _, k in mono)


def degree(e: Expr, blocks: Iterable[str]) -> int:
    terms = polynomial_terms(e, blocks)
    return max((monomial_degree(m) for m in terms), default=0)


def is_affine(e: Expr, blocks: Iterable[str]) -> bool:
    return degree(e, blocks) <= 1


def affine_parts(e: Expr, block: str, dim: int) -> tuple[Expr, list[Expr]]:
    """Split an expression affine in ``block`` into ``(constant, [coefficients])``."""
    terms = polynomial_terms(e, [block])
    if any(monomial_degree(m) > 1 for m in terms):
        raise InputError(f"expression is not affine in block '{block}'")
    constant = terms.get((), ZERO)
    coefficients = [terms.get(((block, i, 1),), ZERO) for i in range(dim)]
    return constant, coefficients


def quadratic_matrix(terms: Mapping[Monomial, Expr], space: VarSpace) -> np.ndarray | None:
    """Hessian of the degree-2 part when every quadratic coefficient is constant."""
    n = space.total_dim
    hess = np.zeros((n, n))
    for mono, coef in terms.items():
        if monomial_degree(mono) != 2:
            continue
        if not isinstance(coef, Const):
            return None
        if len(mono) == 1:
            block, index, _ = mono[0]
            i = space.index(block, index)
            hess[i, i] += 2.0 * coef.value
        else:
            (b1, i1, _), (b2, i2, _) = mono
            i, j = space.index(b1, i1), space.index(b2, i2)
            hess[i, j] += coef.value
            hess[j, i] += coef.value
    return hess


def certify_convex(e: Expr, blocks: Sequence[str], space: VarSpace, eig_tol: float = 1e-10) -> bool:
    """Structural convexity certificate in the variables of ``blocks``.

    Certified pieces: affine expressions, quadratics with constant PSD
    Hessian, even powers of affine expressions, and nonnegative
    combinations of certified pieces.
    """
    sub_space = VarSpace.of(*((b, space.dim(b)) for b in blocks if space.has(b)))
    terms = polynomial_terms(e, sub_space.names)
    deg = max((monomial_degree(m) for m in terms), default=0)
    if deg <= 1:
        return True
    if deg == 2:
        hess = quadratic_matrix(terms, sub_space)
        if hess is not None:
            return bool(np.linalg.eigvalsh(hess).min() >= -eig_tol)
    match e:
        case Add(parts):
            return all(certify_convex(t, blocks, space, eig_tol) for t in parts)
        case Mul(factors):
            constants = [f for f in factors if isinstance(f, Const)]
            rest = [f for f in factors if not isinstance(f, Const)]
            scale = float(np.prod([c.value for c in constants])) if constants else 1.0
            return len(rest) == 1 and scale >= 0 and certify_convex(rest[0], blocks, space, eig_tol)
        case Pow(base, exponent):
            return exponent % 2 == 0 and is_affine(base, sub_space.names)
    return False
