"""Deterministic report rendering: JSON envelopes and plain-text tables."""


import hashlib
import json
import math
from typing import Any

from pydantic import BaseModel

from app.core.config import settings
from app.schemas.reports import Comparison, ComparisonTable, Report

__all__ = ["inputs_digest", "make_report", "to_plain", "render_json", "render_comparison"]


def inputs_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def make_report(command: dict[str, Any], inputs: str, result: Any,
                tolerances: dict[str, float] | None = None) -> Report:
    return Report(
        command=command,
        inputs_digest=inputs_digest(inputs),
        result=result,
        version=settings.app_version,
        tolerances=settings.tolerances() if tolerances is None else tolerances,
    )


def to_plain(value: Any) -> Any:
    """JSON-ready data: camelCase model dumps, non-finite floats as strings."""
    if isinstance(value, BaseModel):
        return to_plain(value.model_dump(mode="python", by_alias=True))
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return value
    if hasattr(value, "tolist"):  # numpy scalars and arrays
        return to_plain(value.tolist())
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "+inf" if value > 0 else "-inf"
        return value + 0.0  # no negative zero
    return str(value)


def render_json(report: BaseModel | dict) -> str:
    """Sorted keys, two-space indent, shortest round-trip floats."""
    return json.dumps(to_plain(report), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def _table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]

    def line(cells: list[str]) -> str:
        return " | ".join(c.ljust(w) for c, w in zip(cells, widths, strict=True)).rstrip()

    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([line(headers), rule, *(line(r) for r in rows)])


def _comparison_table(table: ComparisonTable) -> str:
    kinds = [c.kind for c in table.counts]
    headers = ["", *kinds]
    rows = [
        ["variables", *(str(c.n_vars) for c in table.counts)],
        ["implicit variables", *(str(c.n_implicit_vars) for c in table.counts)],
        ["constraints", *(str(c.n_constraints) for c in table.counts)],
    ]
    rows += [[row.label, *(row.entries[k] for k in kinds)] for row in table.qualitative]
    return f"{table.title}\n{_table(headers, rows)}"


def render_comparison(comparison: Comparison | dict[str, int], tables: list[ComparisonTable] | None = None) -> str:
    if isinstance(comparison, Comparison):
        dims, tables = comparison.dims, comparison.tables
    else:
        dims = comparison
    head = "dims: " + ", ".join(f"{k}={v}" for k, v in dims.items())
    return "\n\n".join([head, *(_comparison_table(t) for t in tables or [])]) + "\n"
