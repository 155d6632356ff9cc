"""
Text formats: prefix s-expressions, problem files and point literals.

S-expression grammar (canonical spacing is what ``Expr.to_sexpr`` prints)::

    expr := (const NUMBER) | (var BLOCK INDEX) | (neg expr)
          | (pow expr EXPONENT) | (+ expr ...) | (* expr ...)

Problem files are line oriented: ``key = value``, ``#`` starts a comment,
expressions are double-quoted.  Point literals look like
``x=0;y=1;u=0,1``.
"""


import logging
import re

import pydantic

from app.core.exceptions import InputError, ParseError
from app.domain.expr import Add, Const, Expr, Mul, Neg, Point, Pow, Var, VarSpace
from app.domain.problem import BilevelProblem
from app.schemas.problem_file import ProblemFile

logger = logging.getLogger(__name__)

__all__ = [
    "parse_expr",
    "print_expr",
    "parse_problem_file",
    "problem_from_text",
    "render_problem_file",
    "parse_point",
]

# ---------------------------------------------------------------------------
# S-expressions
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\()|(\))|([^\s()]+))")
_NUMBER = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")
_INTEGER = re.compile(r"^\d+$")


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens: list[tuple[str, int]] = []
    pos = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if not match or match.end() == pos:
            break
        tok = match.group(1) or match.group(2) or match.group(3)
        if tok is None:  # trailing whitespace
            break
        tokens.append((tok, match.start(match.lastindex)))
        pos = match.end()
    return tokens


class _Reader:
    def __init__(self, text: str, space: VarSpace):
        self.text = text
        self.space = space
        self.tokens = _tokenize(text)
        self.i = 0

    def _peek(self) -> tuple[str, int]:
        if self.i >= len(self.tokens):
            raise ParseError("syntax error: unexpected end of input", len(self.text))
        return self.tokens[self.i]

    def _next(self) -> tuple[str, int]:
        tok = self._peek()
        self.i += 1
        return tok

    def _expect_close(self) -> None:
        tok, pos = self._next()
        if tok != ")":
            raise ParseError(f"syntax error: expected ')' but found '{tok}'", pos)

    def _integer(self, what: str) -> int:
        tok, pos = self._next()
        if not _INTEGER.match(tok):
            raise ParseError(f"syntax error: {what} must be a non-negative integer, got '{tok}'", pos)
        return int(tok)

    def read(self) -> Expr:
        tok, pos = self._next()
        if tok != "(":
            raise ParseError(f"syntax error: expected '(' but found '{tok}'", pos)
        head, head_pos = self._next()
        match head:
            case "const":
                tok, pos = self._next()
                if not _NUMBER.match(tok):
                    raise ParseError(f"syntax error: bad number '{tok}'", pos)
                node: Expr = Const(float(tok))
            case "var":
                block, pos = self._next()
                if not self.space.has(block):
                    raise ParseError(f"unknown symbol: block '{block}'", pos)
                index = self._integer("variable index")
                if index >= self.space.dim(block):
                    raise ParseError(
                        f"unknown symbol: ({block} {index}) exceeds dimension "
                        f"{self.space.dim(block)}",
                        pos,
                    )
                node = Var(block, index)
            case "neg":
                node = Neg(self.read())
            case "pow":
                base = self.read()
                node = Pow(base, self._integer("exponent"))
            case "+" | "*":
                children = [self.read()]
                while self._peek()[0] != ")":
                    children.append(self.read())
                node = Add(tuple(children)) if head == "+" else Mul(tuple(children))
            case "(" | ")":
                raise ParseError(f"syntax error: expected operator but found '{head}'", head_pos)
            case _:
                raise ParseError(f"unknown symbol '{head}'", head_pos)
        self._expect_close()
        return node


def parse_expr(text: str, space: VarSpace) -> Expr:
    """Parse one prefix s-expression against ``space``."""
    reader = _Reader(text, space)
    expr = reader.read()
    if reader.i != len(reader.tokens):
        _, pos = reader.tokens[reader.i]
        raise ParseError("syntax error: trailing input", pos)
    return expr


def print_expr(expr: Expr) -> str:
    return expr.to_sexpr()


# ---------------------------------------------------------------------------
# Problem files
# ---------------------------------------------------------------------------

_LINE = re.compile(r"^\s*([A-Za-z_][\w.]*)(?:\[(\d+)\])?\s*=\s*(.*?)\s*$")

_SCALAR_KEYS = {
    "name": "name",
    "n": "n",
    "m": "m",
    "p": "p",
    "q": "q",
    "F": "upper_objective",
    "f": "lower_objective",
    "box.radius": "box_radius",
    "box.step": "box_step",
    "tol": "tol",
    "tol_act": "tol_act",
}
_LIST_KEYS = {"G": "upper_constraints", "g": "lower_constraints"}


def _unquote(raw: str, lineno: int) -> str:
    if len(raw) >= 2 and raw[0] == raw[-1] == '"':
        return raw[1:-1]
    if raw.startswith('"'):
        raise ParseError(f"line {lineno}: unterminated string")
    return raw


def parse_problem_file(text: str) -> ProblemFile:
    """Read the ``key = value`` lines into a validated ProblemFile."""
    fields: dict[str, object] = {}
    lists: dict[str, dict[int, str]] = {"G": {}, "g": {}}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        match = _LINE.match(stripped)
        if not match:
            raise ParseError(f"line {lineno}: expected 'key = value'")
        key, index, raw = match.group(1), match.group(2), match.group(3)
        value = _unquote(raw, lineno)
        if key in _LIST_KEYS:
            if index is None:
                raise ParseError(f"line {lineno}: '{key}' needs an index, e.g. {key}[0]")
            if int(index) in lists[key]:
                raise ParseError(f"line {lineno}: duplicate {key}[{index}]")
            lists[key][int(index)] = value
        elif key in _SCALAR_KEYS and index is None:
            fields[_SCALAR_KEYS[key]] = value
        else:
            raise ParseError(f"line {lineno}: unknown key '{key}'")
    for key, entries in lists.items():
        if sorted(entries) != list(range(len(entries))):
            raise InputError(f"{key}[i] indices must be 0..{len(entries) - 1} without gaps")
        fields[_LIST_KEYS[key]] = [entries[i] for i in range(len(entries))]
    try:
        return ProblemFile.model_validate(fields)
    except pydantic.ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(part) for part in first.get("loc", ())) or "file"
        raise InputError(f"invalid problem file ({loc}): {first['msg']}") from exc


def to_bilevel(pf: ProblemFile) -> BilevelProblem:
    upper = VarSpace.of(("x", pf.n))
    joint = VarSpace.of(("x", pf.n), ("y", pf.m))
    problem = BilevelProblem(
        n=pf.n,
        m=pf.m,
        p=pf.p,
        q=pf.q,
        upper_objective=parse_expr(pf.upper_objective, joint),
        upper_constraints=tuple(parse_expr(t, upper) for t in pf.upper_constraints),
        lower_objective=parse_expr(pf.lower_objective, joint),
        lower_constraints=tuple(parse_expr(t, joint) for t in pf.lower_constraints),
        name=pf.name,
    )
    logger.debug("parsed problem '%s' with dims %s", pf.name, problem.dims)
    return problem


def problem_from_text(text: str) -> tuple[ProblemFile, BilevelProblem]:
    pf = parse_problem_file(text)
    return pf, to_bilevel(pf)


def render_problem_file(bp: BilevelProblem) -> str:
    """Canonical problem-file text for ``bp``."""
    lines = [
        f"name = {bp.name}",
        f"n = {bp.n}",
        f"m = {bp.m}",
        f"p = {bp.p}",
        f"q = {bp.q}",
        f'F = "{bp.upper_objective.to_sexpr()}"',
    ]
    lines += [f'G[{i}] = "{e.to_sexpr()}"' for i, e in enumerate(bp.upper_constraints)]
    lines.append(f'f = "{bp.lower_objective.to_sexpr()}"')
    lines += [f'g[{i}] = "{e.to_sexpr()}"' for i, e in enumerate(bp.lower_constraints)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Point literals
# ---------------------------------------------------------------------------

def parse_point(text: str, space: VarSpace) -> Point:
    """Parse ``x=0;y=1;u=0,1`` into a Point of ``space``."""
    blocks: dict[str, list[float]] = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        name, sep, raw = part.partition("=")
        if not sep:
            raise ParseError(f"point component '{part}' must look like block=v1,v2")
        name = name.strip()
        try:
            blocks[name] = [float(v) for v in raw.split(",") if v.strip()]
        except ValueError as exc:
            raise ParseError(f"point component '{part}' has a non-numeric value") from exc
    point = Point.from_blocks(space, blocks)
    return point
