"""CSV trajectory ingestion: ``object_id,timestamp,lon,lat`` per line."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from ..core import GridStreamError, ObjectUpdate

HEADER = ("object_id", "timestamp", "lon", "lat")


@dataclass
class ParseReport:
    lines: int = 0
    malformed: int = 0
    examples: list[tuple[int, str]] = field(default_factory=list)

    def __str__(self):
        shown = "; ".join(f"line {n}: {text!r}" for n, text in self.examples)
        return f"{self.malformed} of {self.lines} lines malformed ({shown})"


class IngestError(GridStreamError):
    def __init__(self, report: ParseReport):
        super().__init__(str(report))
        self.report = report


def _parse(row: list[str]) -> ObjectUpdate:
    if len(row) != 4:
        raise ValueError("expected 4 fields")
    return ObjectUpdate(int(row[0]), int(row[1]), float(row[2]), float(row[3]))


def ingest_csv(path, error_budget: float = 0.01) -> list[ObjectUpdate]:
    """Read updates in file order, skipping malformed lines.

    Raises:
        IngestError: more than ``error_budget`` of the data lines are malformed.
    """
    return parse_csv(path, error_budget)[0]


def parse_csv(path, error_budget: float = 0.01) -> tuple[list[ObjectUpdate], ParseReport]:
    """Like :func:`ingest_csv`, also returning the parse report."""
    report = ParseReport()
    out = []
    with open(path, newline="") as fh:
        for n, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if n == 1 and tuple(c.strip().lower() for c in row) == HEADER:
                continue
            report.lines += 1
            try:
                out.append(_parse(row))
            except ValueError:
                report.malformed += 1
                if len(report.examples) < 5:
                    report.examples.append((n, ",".join(row)))
    if report.lines and report.malformed / report.lines > error_budget:
        raise IngestError(report)
    return out, report


def write_csv(path, updates, header: bool = True):
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(HEADER)
        for u in updates:
            w.writerow((u.object_id, u.timestamp, repr(u.lon), repr(u.lat)))
