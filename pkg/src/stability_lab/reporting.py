"""Report rows and their deterministic CSV / JSON serialisation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

CSV_FIELDS = (
    "experiment",
    "grid",
    "metric",
    "value",
    "ci",
    "bits_used",
    "samples_used",
    "status",
    "acceptance",
    "note",
)


@dataclass
class ReportRow:
    metric: str
    value: float
    ci: Optional[float] = None
    bits_used: Optional[int] = None
    samples_used: Optional[int] = None
    passed: Optional[bool] = None  # None: informational row
    note: str = ""
    experiment: str = ""
    grid: dict = field(default_factory=dict)
    status: str = "ok"
    wall_time: float = 0.0

    @property
    def acceptance(self) -> str:
        if self.passed is None:
            return ""
        return "pass" if self.passed else "fail"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".10g")


def grid_key(grid: dict) -> str:
    return json.dumps(grid, sort_keys=True, separators=(",", ":")) if grid else ""


def sort_rows(rows: Iterable[ReportRow]) -> list:
    """Grid point first, then metric; stable within equal keys."""
    return sorted(rows, key=lambda r: (r.experiment, grid_key(r.grid), r.metric))


def rows_to_csv(rows: Iterable[ReportRow]) -> str:
    """CSV text without timing columns, so equal seeds give equal bytes."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in sort_rows(rows):
        writer.writerow(
            [
                r.experiment,
                grid_key(r.grid),
                r.metric,
                _fmt(r.value),
                _fmt(r.ci),
                _fmt(r.bits_used),
                _fmt(r.samples_used),
                r.status,
                r.acceptance,
                r.note,
            ]
        )
    return buf.getvalue()


def rows_to_summary(rows: Iterable[ReportRow], extra: Optional[dict] = None) -> dict:
    rows = sort_rows(rows)
    accepted = [r for r in rows if r.passed is not None]
    summary = {
        "rows": [
            {k: v for k, v in asdict(r).items()} | {"acceptance": r.acceptance}
            for r in rows
        ],
        "acceptance_rows": len(accepted),
        "acceptance_failures": sum(1 for r in accepted if not r.passed),
        "wall_time": sum(r.wall_time for r in rows),
    }
    if extra:
        summary.update(extra)
    return summary


def all_passed(rows: Iterable[ReportRow]) -> bool:
    return all(r.passed is not False and r.status == "ok" for r in rows)
