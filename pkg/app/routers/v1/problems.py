"""Problem endpoints: thin HTTP layer over :mod:`app.services.commands`.

Problem files arrive as multipart uploads; the commands run in the
threadpool because grid scans are CPU bound.  Reports are returned in the
``{"data": ...}`` envelope with non-finite floats rendered as strings.
"""


import logging
from typing import Any

from fastapi import APIRouter, File, HTTPException, Query, UploadFile
from starlette.concurrency import run_in_threadpool

from app.core.config import settings
from app.core.response import DataResponse
from app.services import commands
from app.services.commands import CheckOptions, CommandResult
from app.services.examples import EXAMPLES
from app.services.report import to_plain

logger = logging.getLogger(__name__)

router = APIRouter(tags=["Problems"])


async def _read_problem(file: UploadFile) -> str:
    contents = await file.read()
    if len(contents) == 0:
        raise HTTPException(status_code=400, detail="Uploaded problem file is empty.")
    if len(contents) > settings.max_upload_size_bytes:
        raise HTTPException(
            status_code=413,
            detail=f"Problem file exceeds the {settings.max_upload_size_kb}KB limit.",
        )
    try:
        return contents.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise HTTPException(status_code=400, detail="Problem file must be UTF-8 text.") from exc


def _envelope(outcome: CommandResult) -> dict[str, Any]:
    data = to_plain(outcome.report)
    data["exitCode"] = outcome.exit_code
    return {"data": data}


# ---------------------------------------------------------------------------
# Examples
# ---------------------------------------------------------------------------

@router.get("/examples", response_model=DataResponse[list[str]])
async def list_examples():
    """Names accepted by ``GET /examples/{name}`` (plus ``all``)."""
    return {"data": list(EXAMPLES)}


@router.get("/examples/{name}", response_model=DataResponse[dict[str, Any]])
async def run_example(name: str):
    outcome = await run_in_threadpool(commands.cmd_examples, name)
    return _envelope(outcome)


# ---------------------------------------------------------------------------
# Problem files
# ---------------------------------------------------------------------------

@router.post("/problems/reformulate", response_model=DataResponse[dict[str, Any]])
async def reformulate(
    file: UploadFile = File(...),
    kind: str = Query(..., description="vf, kkt, ge, ld, wd or mwd"),
    per_component: bool = Query(default=False, alias="perComponent"),
):
    """Emit the single-level reformulation of the uploaded problem."""
    text = await _read_problem(file)
    outcome = await run_in_threadpool(commands.cmd_reformulate, text, kind, per_component)
    return _envelope(outcome)


@router.post("/problems/compare", response_model=DataResponse[dict[str, Any]])
async def compare(file: UploadFile = File(...)):
    """Variable/constraint counts and qualitative comparison tables."""
    text = await _read_problem(file)
    outcome = await run_in_threadpool(commands.cmd_compare, text)
    return _envelope(outcome)


@router.post("/problems/check", response_model=DataResponse[dict[str, Any]])
async def check(
    file: UploadFile = File(...),
    what: str = Query(..., description=", ".join(commands.CHECKS)),
    point: str | None = Query(default=None, description="e.g. x=0;y=1;u=0,1"),
    kind: str | None = Query(default=None),
    dual_kind: str = Query(default="lagrange", alias="dualKind"),
    dual_point: str | None = Query(default=None, alias="dualPoint"),
    radius: float | None = Query(default=None, gt=0),
    step: float | None = Query(default=None, gt=0),
    lower_slater: bool = Query(default=False, alias="lowerSlater"),
):
    """Run one check; the verdict's exit code is reported as ``exitCode``."""
    text = await _read_problem(file)
    opts = CheckOptions(
        point=point, kind=kind, dual_kind=dual_kind, dual_point=dual_point,
        radius=radius, step=step, lower_slater=lower_slater,
    )
    outcome = await run_in_threadpool(commands.cmd_check, text, what, opts)
    return _envelope(outcome)
