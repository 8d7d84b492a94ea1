"""Aggregate result CSVs across seeds into summaries and gnuplot data."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np

from .schema import ResultRow, SchemaError, fmt, read_csv, sort_key, write_csv

BAND = (16.0, 84.0)  # central 68%


def aggregate(rows: Iterable[ResultRow]) -> list[ResultRow]:
    """Median and central band of ``y`` per (experiment, env, algorithm, metric, x)."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r.experiment, r.env, r.algorithm, r.metric, r.x), []).append(r.y)
    out = []
    for (exp, env, algo, metric, x), ys in sorted(groups.items()):
        ys = np.asarray(ys)
        lo, hi = np.percentile(ys, BAND, method="inverted_cdf")
        n = len(ys)
        for name, y in (("median", float(np.median(ys))), ("band_lo", float(lo)), ("band_hi", float(hi))):
            # the seed column of a summary row carries the number of seeds aggregated
            out.append(ResultRow(exp, env, f"{algo}:{metric}", n, name, x, y))
    return out


def report(paths: Iterable[str | Path], out_dir: str | Path) -> list[ResultRow]:
    rows = []
    for p in paths:
        rows.extend(read_csv(p))
    if not rows:
        raise SchemaError("no result rows to report")
    summary = aggregate(rows)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(sorted(summary, key=sort_key), out_dir / "summary.csv")
    series: dict[tuple, list[tuple[float, float]]] = {}
    for r in summary:
        series.setdefault((r.experiment, r.env, r.algorithm, r.metric), []).append((r.x, r.y))
    for (exp, env, algo, stat), pts in series.items():
        name = "__".join((exp, env, algo.replace(":", "-"), stat)) + ".dat"
        body = "".join(f"{fmt(x)} {fmt(y)}\n" for x, y in sorted(pts))
        (out_dir / name).write_text(f"# {exp} {env} {algo} {stat}\n" + body)
    return summary


def format_table(summary: list[ResultRow]) -> str:
    """Plain-text table: one line per (experiment, env, series, x)."""
    cells: dict[tuple, dict[str, float]] = {}
    for r in summary:
        cells.setdefault((r.experiment, r.env, r.algorithm, r.x, r.seed), {})[r.metric] = r.y
    lines = [f"{'experiment':24} {'env':16} {'series':36} {'x':>8} {'n':>4} {'median':>12} {'band':>27}"]
    for (exp, env, algo, x, n), v in sorted(cells.items()):
        lines.append(f"{exp:24} {env:16} {algo:36} {x:8g} {n:4d} {v['median']:12.6g} "
                     f"[{v['band_lo']:11.6g}, {v['band_hi']:11.6g}]")
    return "\n".join(lines)
