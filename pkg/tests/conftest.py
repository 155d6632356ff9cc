"""Shared fixtures: the worked-example problems and their problem-file text."""


import numpy as np
import pytest

from app.domain.expr import var
from app.domain.problem import BilevelProblem
from app.services.catalog import (
    bcq_fails_example,
    cube_root_example,
    isc_synthetic_example,
    running_example,
)
from app.services.parser import render_problem_file


@pytest.fixture
def running() -> BilevelProblem:
    return running_example()


@pytest.fixture
def bcq_fails() -> BilevelProblem:
    return bcq_fails_example()


@pytest.fixture
def cube_root() -> BilevelProblem:
    return cube_root_example()


@pytest.fixture
def isc_synthetic() -> BilevelProblem:
    return isc_synthetic_example()


@pytest.fixture
def running_text(running: BilevelProblem) -> str:
    return render_problem_file(running)


RUNNING_FILE = """\
# min (x-1)^2 + (y-1)^2 over the solutions of min_y {-y | x+y <= 1, -x+y <= 1}
name = running
n = 1
m = 1
p = 2
q = 0
F = "(+ (pow (+ (var x 0) (const -1)) 2) (pow (+ (var y 0) (const -1)) 2))"
f = "(neg (var y 0))"
g[0] = "(+ (var x 0) (var y 0) (const -1))"
g[1] = "(+ (neg (var x 0)) (var y 0) (const -1))"
"""


@pytest.fixture
def running_file() -> str:
    return RUNNING_FILE


@pytest.fixture
def cube_root_text(cube_root: BilevelProblem) -> str:
    return render_problem_file(cube_root)


@pytest.fixture
def running_path(tmp_path, running_file: str):
    path = tmp_path / "running.txt"
    path.write_text(running_file, encoding="utf-8")
    return path


def _random_lower_level(rng: np.random.Generator, n: int, m: int, p: int,
                        quadratic: bool = False) -> BilevelProblem:
    """Lower level with g = Ay - Bx - b, bounded for every x in [-1, 1]^n.

    f = cᵀy + dᵀx with c = -Aᵀu0 for some u0 > 0, plus ½yᵀQy (Q positive
    definite) when ``quadratic``; b >= 0.5 keeps y = 0 strictly feasible.
    """
    x = [var("x", i) for i in range(n)]
    y = [var("y", j) for j in range(m)]
    a = rng.normal(size=(p, m))
    big_b = rng.uniform(-0.1, 0.1, size=(p, n))
    b = rng.uniform(0.5, 1.5, size=p)
    c = -a.T @ rng.uniform(0.5, 1.5, size=p)
    d = rng.normal(size=n)

    def linear(coefs, vs):
        return sum((float(k) * v for k, v in zip(coefs, vs, strict=True)), 0.0)

    lower = linear(c, y) + linear(d, x)
    if quadratic:
        root = rng.normal(size=(m, m))
        q = root.T @ root + 0.5 * np.eye(m)
        lower = lower + sum((0.5 * float(q[i, j]) * y[i] * y[j] for i in range(m) for j in range(m)), 0.0)
    constraints = tuple(linear(a[i], y) - linear(big_b[i], x) - float(b[i]) for i in range(p))
    return BilevelProblem(
        n=n, m=m, p=p, q=0,
        upper_objective=x[0] + y[0], upper_constraints=(),
        lower_objective=lower, lower_constraints=constraints,
        name="random-lower-level",
    )


@pytest.fixture
def random_lower_level():
    return _random_lower_level
