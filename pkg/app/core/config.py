import threading
from contextlib import contextmanager

from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Workbench configuration loaded from environment variables / .env file."""

    app_name: str = Field(default="Bilevel Reformulation Workbench", alias="APP_NAME")
    app_env: str = Field(default="development", alias="APP_ENV")
    app_version: str = Field(default="1.0.0", alias="APP_VERSION")
    frontend_url: str = Field(default="http://localhost:3000", alias="FRONTEND_URL")
    max_upload_size_kb: int = Field(default=256, alias="MAX_UPLOAD_SIZE_KB")

    # Numerical tolerances
    tol: float = Field(default=1e-8, alias="BILEVEL_TOL")
    tol_act: float = Field(default=1e-7, alias="BILEVEL_TOL_ACT")
    rank_tol: float = Field(default=1e-8, alias="BILEVEL_RANK_TOL")
    lp_tol: float = Field(default=1e-9, alias="BILEVEL_LP_TOL")
    tol_obj: float = Field(
        default=1e-7, alias="BILEVEL_TOL_OBJ",
    )  # minimum objective drop that counts as an improving witness

    # Grid oracles
    step: float = Field(default=1e-3, alias="BILEVEL_STEP")
    radius: float = Field(default=0.1, alias="BILEVEL_RADIUS")
    implicit_step: float = Field(
        default=0.05, alias="BILEVEL_IMPLICIT_STEP",
    )  # grid step on z/u blocks in local checks
    max_grid_points: int = Field(default=20_000_000, alias="BILEVEL_MAX_GRID_POINTS")
    grid_chunk: int = Field(default=1_000_000, alias="BILEVEL_GRID_CHUNK")
    workers: int = Field(default=1, alias="BILEVEL_WORKERS")

    # Enumeration / solvers
    dim_cap: int = Field(default=6, alias="BILEVEL_DIM_CAP")
    max_iter: int = Field(default=200, alias="BILEVEL_MAX_ITER")
    implicit_budget: int = Field(default=100_000_000, alias="BILEVEL_IMPLICIT_BUDGET")
    isc_norm_limit: float = Field(default=1e3, alias="BILEVEL_ISC_NORM_LIMIT")

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "populate_by_name": True,
        "extra": "ignore",
    }

    @property
    def max_upload_size_bytes(self) -> int:
        return self.max_upload_size_kb * 1024

    @property
    def debug(self) -> bool:
        return self.app_env == "development"

    def tolerances(self) -> dict[str, float]:
        """Tolerances echoed in every report."""
        return {
            "tol": self.tol,
            "tolAct": self.tol_act,
            "rankTol": self.rank_tol,
            "lpTol": self.lp_tol,
            "tolObj": self.tol_obj,
            "step": self.step,
            "radius": self.radius,
            "implicitStep": self.implicit_step,
        }


settings = Settings()


_override_lock = threading.RLock()


@contextmanager
def settings_override(**values):
    """Temporarily replace settings fields; overridden runs are serialised."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        yield settings
        return
    with _override_lock:
        saved = {k: getattr(settings, k) for k in values}
        try:
            for key, value in values.items():
                setattr(settings, key, value)
            yield settings
        finally:
            for key, value in saved.items():
                setattr(settings, key, value)
