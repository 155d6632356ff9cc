"""Built-in bilevel problems used by the example suite, the tests and the API."""


from collections.abc import Callable

from app.core.exceptions import NotFoundError
from app.domain.expr import var
from app.domain.problem import BilevelProblem

__all__ = [
    "running_example",
    "bcq_fails_example",
    "cube_root_example",
    "isc_synthetic_example",
    "PROBLEMS",
    "get_problem",
]


def running_example() -> BilevelProblem:
    """min (x-1)² + (y-1)²  s.t.  y ∈ argmin_y {-y | x + y <= 1, -x + y <= 1}.

    Ψ(x) = {1 - |x|}; unique global minimizer (1/2, 1/2) with value 1/2.
    """
    x, y = var("x"), var("y")
    return BilevelProblem(
        n=1, m=1, p=2, q=0,
        upper_objective=(x - 1) ** 2 + (y - 1) ** 2,
        upper_constraints=(),
        lower_objective=-y,
        lower_constraints=(x + y - 1, -x + y - 1),
        name="running",
    )


def bcq_fails_example() -> BilevelProblem:
    """Lower level min_y {x(y₁ + y₂) | y₁ + y₂ <= 2, y₁ - y₂ <= 0}."""
    x, y1, y2 = var("x"), var("y", 0), var("y", 1)
    return BilevelProblem(
        n=1, m=2, p=2, q=0,
        upper_objective=(x - 1) ** 2 + y1 ** 2 + y2 ** 2,
        upper_constraints=(),
        lower_objective=x * (y1 + y2),
        lower_constraints=(y1 + y2 - 2, y1 - y2),
        name="bcq-fails",
    )


def cube_root_example() -> BilevelProblem:
    """Lower level min_y {y | y³ <= x, y >= 0}; not convex in y.

    At x = 8 the Wolfe dual of the lower level has feasible points with
    value above the primal optimum 0.
    """
    x, y = var("x"), var("y")
    return BilevelProblem(
        n=1, m=1, p=2, q=1,
        upper_objective=(x - 8) ** 2 + y ** 2,
        upper_constraints=(-x,),
        lower_objective=y,
        lower_constraints=(y ** 3 - x, -y),
        name="cube-root",
    )


def isc_synthetic_example() -> BilevelProblem:
    """Lower level min_y {-y | x(y - 1) <= 0, y - 1 - x <= 0}.

    For x > 0, Λ(x, 1) = {(1/x, 0)}: multipliers escape as x ↓ 0.
    """
    x, y = var("x"), var("y")
    return BilevelProblem(
        n=1, m=1, p=2, q=0,
        upper_objective=x ** 2 + (y - 1) ** 2,
        upper_constraints=(),
        lower_objective=-y,
        lower_constraints=(x * (y - 1), y - 1 - x),
        name="isc-synthetic",
    )


PROBLEMS: dict[str, Callable[[], BilevelProblem]] = {
    "running": running_example,
    "bcq-fails": bcq_fails_example,
    "cube-root": cube_root_example,
    "isc-synthetic": isc_synthetic_example,
}


def get_problem(name: str) -> BilevelProblem:
    factory = PROBLEMS.get(name)
    if factory is None:
        raise NotFoundError("Problem", name)
    return factory()
