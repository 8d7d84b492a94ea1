"""Result rows and the CSV format shared by every experiment."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

HEADER = ("experiment", "env", "algorithm", "seed", "metric", "x", "y", "flag")

METRICS = frozenset({
    "q_probe",            # fixed-point Q at the probe pair
    "greedy_probe",       # greedy action at the probe state
    "value_error",        # sup distance to the oracle
    "iterations",
    "residual",
    "samples",
    "converged",
    "gate_choice",        # n' picked by the gate
    "episodes_to_solve",
    "greedy_optimal",
    "retrace_weight",
    "violations",
    "check",
    "median",
    "band_lo",
    "band_hi",
})


class SchemaError(ValueError):
    pass


def fmt(x: float) -> str:
    """17 significant digits: parses back to the identical double."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "{:.17g}".format(x)


@dataclass(frozen=True, order=True)
class ResultRow:
    experiment: str
    env: str
    algorithm: str
    seed: int
    metric: str
    x: float
    y: float
    flag: int = 1

    def __post_init__(self):
        if self.metric not in METRICS:
            raise SchemaError(f"unknown metric {self.metric!r}")
        for name in ("experiment", "env", "algorithm"):
            if "," in getattr(self, name) or "\n" in getattr(self, name):
                raise SchemaError(f"{name} must not contain commas or newlines")

    def cells(self) -> list[str]:
        return [self.experiment, self.env, self.algorithm, str(int(self.seed)), self.metric,
                fmt(self.x), fmt(self.y), str(int(self.flag))]


def sort_key(row: ResultRow):
    return (row.experiment, row.env, row.algorithm, row.metric, row.seed, row.x)


def render(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for row in rows:
        w.writerow(row.cells())
    return buf.getvalue()


def write_csv(rows: Iterable[ResultRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render(rows))
    return path


def read_csv(path: str | Path) -> list[ResultRow]:
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise SchemaError(f"{path}: empty file") from None
    if header != HEADER:
        raise SchemaError(f"{path}: header {header} does not match {HEADER}")
    rows = []
    for lineno, cells in enumerate(reader, start=2):
        if len(cells) != len(HEADER):
            raise SchemaError(f"{path}:{lineno}: expected {len(HEADER)} fields, got {len(cells)}")
        try:
            rows.append(ResultRow(cells[0], cells[1], cells[2], int(cells[3]), cells[4],
                                  float(cells[5]), float(cells[6]), int(cells[7])))
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return rows
