"""Problem-file schema: dims, quoted s-expressions and optional metadata."""


from pydantic import Field, model_validator

from app.schemas.common import CamelModel


class ProblemFile(CamelModel):
    """Validated contents of a line-oriented ``key = value`` problem file.

    Keys: ``n m p q`` (dims), ``F`` and ``f`` (objectives), ``G[i]`` and
    ``g[i]`` (constraints, ``≤ 0``), plus optional ``name``,
    ``box.radius``, ``box.step``, ``tol``, ``tol_act``.
    """

    name: str = "problem"
    n: int = Field(ge=1)
    m: int = Field(ge=1)
    p: int = Field(default=0, ge=0)
    q: int = Field(default=0, ge=0)
    upper_objective: str = Field(description="F(x, y)")
    upper_constraints: list[str] = Field(default_factory=list, description="G_i(x) <= 0")
    lower_objective: str = Field(description="f(x, y)")
    lower_constraints: list[str] = Field(default_factory=list, description="g_i(x, y) <= 0")
    box_radius: float | None = Field(default=None, gt=0)
    box_step: float | None = Field(default=None, gt=0)
    tol: float | None = Field(default=None, gt=0)
    tol_act: float | None = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _dims_match(self) -> "ProblemFile":
        if len(self.upper_constraints) != self.q:
            raise ValueError(f"q = {self.q} but {len(self.upper_constraints)} G[i] given")
        if len(self.lower_constraints) != self.p:
            raise ValueError(f"p = {self.p} but {len(self.lower_constraints)} g[i] given")
        return self
