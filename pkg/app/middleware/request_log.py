"""Request logging middleware: one line per request with status and duration."""


import logging
import time
from collections.abc import Callable

from fastapi import Request, Response
from starlette.middleware.base import BaseHTTPMiddleware

logger = logging.getLogger(__name__)

# Methods that run a command
_COMMAND_METHODS = {"POST"}


class RequestLogMiddleware(BaseHTTPMiddleware):
    """Logs method, path, status and duration.

    Command requests (POST) log at INFO since they may run long grid
    scans; everything else logs at DEBUG.
    """

    async def dispatch(self, request: Request, call_next: Callable) -> Response:
        start = time.monotonic()
        response = await call_next(request)
        duration_ms = round((time.monotonic() - start) * 1000)
        level = logging.INFO if request.method in _COMMAND_METHODS else logging.DEBUG
        logger.log(
            level, "%s %s -> %d in %d ms",
            request.method, request.url.path, response.status_code, duration_ms,
        )
        return response
