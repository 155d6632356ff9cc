"""Workbench exceptions, CLI exit codes and FastAPI exception handlers."""


from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

EXIT_HOLDS = 0
EXIT_VIOLATED = 1
EXIT_ERROR = 2


class AppException(Exception):
    """Base workbench exception."""

    exit_code: int = EXIT_ERROR

    def __init__(self, message: str, status_code: int = 500, code: str = "INTERNAL_ERROR"):
        self.message = message
        self.status_code = status_code
        self.code = code
        super().__init__(message)


class InputError(AppException):
    """Malformed or infeasible input (bad point, dimension mismatch, unknown block)."""

    def __init__(self, message: str):
        super().__init__(message, status_code=422, code="INPUT_ERROR")


class ParseError(InputError):
    """S-expression or problem-file syntax error; ``position`` is a character offset."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} at position {position}")
        self.code = "PARSE_ERROR"
        self.position = position


class CapabilityError(AppException):
    """The input is valid but outside the structures the workbench can decide."""

    def __init__(self, message: str):
        super().__init__(message, status_code=422, code="CAPABILITY_ERROR")


class BudgetExceededError(CapabilityError):
    def __init__(self, message: str):
        super().__init__(message)
        self.code = "BUDGET_EXCEEDED"


class NotFoundError(AppException):
    def __init__(self, entity: str, entity_id: str | None = None):
        msg = f"{entity} not found" if not entity_id else f"{entity} '{entity_id}' not found"
        super().__init__(msg, status_code=404, code="NOT_FOUND")


# ---------------------------------------------------------------------------
# FastAPI exception handlers
# ---------------------------------------------------------------------------

def error_body(code: str, message: str) -> dict:
    return {"error": {"code": code, "message": message}}


def register_exception_handlers(app: FastAPI) -> None:
    """Attach all custom exception handlers to the FastAPI app."""

    @app.exception_handler(AppException)
    async def app_exception_handler(request: Request, exc: AppException) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status_code,
            content=error_body(exc.code, exc.message),
        )

    @app.exception_handler(404)
    async def not_found_handler(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(
            status_code=404,
            content=error_body("NOT_FOUND", "Resource not found"),
        )

    @app.exception_handler(500)
    async def internal_error_handler(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(
            status_code=500,
            content=error_body("INTERNAL_ERROR", "An unexpected error occurred"),
        )
