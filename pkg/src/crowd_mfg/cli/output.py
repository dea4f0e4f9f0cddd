"""CSV, manifest and failure-record writers."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..core import Solution, Trajectory

FRAME_HEADER = ("t", "x", "rho", "phi", "v", "j")
CHANNELS = ("rho", "phi", "v", "j")


def fmt(value: float) -> str:
    """Shortest text that round-trips the float exactly (17 significant digits at most)."""
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return "nan"
    return repr(value) if math.isfinite(value) else ("inf" if value > 0 else "-inf")


def _as_solution(data: Solution | Trajectory) -> Solution:
    return data if isinstance(data, Solution) else Solution(rho=data)


def write_frame_csv(data: Solution | Trajectory, path: str | Path) -> Path:
    """One row per (frame, cell), ordered by ``t`` then ``x``.

    A bare trajectory fills the ``rho`` column; channels a solver does not
    produce are written as empty fields so the header never changes.
    """
    sol = _as_solution(data)
    if len(sol.rho) == 0:
        raise ValueError("empty trajectory")
    path = Path(path)
    x = sol.grid.centers
    chans = [sol.channels()[c] for c in CHANNELS]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRAME_HEADER)
        for k, t in enumerate(sol.times):
            cols = [None if c is None else c.values[k] for c in chans]
            for i, xi in enumerate(x):
                w.writerow([fmt(t), fmt(xi)] + ["" if c is None else fmt(c[i]) for c in cols])
    return path


def read_frame_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Columns of a frame CSV as float arrays (``nan`` for empty fields)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        out[name] = np.array([float(r[j]) if r[j] != "" else np.nan for r in body])
    return out


def probe_rows(sol: Solution, probes: Sequence[float]) -> list[list[str]]:
    """Nearest-cell samples of every channel at each probe position."""
    rows = []
    chans = sol.channels()
    cells = [sol.grid.nearest_cell(p) for p in probes]
    xc = sol.grid.centers
    for k, t in enumerate(sol.times):
        for p, i in zip(probes, cells):
            vals = ["" if chans[c] is None else fmt(chans[c].values[k, i]) for c in CHANNELS]
            rows.append([fmt(t), fmt(p), fmt(xc[i])] + vals)
    return rows


def write_probe_csv(sol: Solution, probes: Sequence[float], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "probe", "x_cell") + CHANNELS)
        w.writerows(probe_rows(sol, probes))
    return path


def write_table_csv(header: Sequence[str], rows: Iterable[Sequence], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def write_history_csv(report, path: str | Path) -> Path:
    """Objective, gradient norm and accepted step per descent iteration."""
    steps = list(report.step_history) + [None] * (len(report.objective_history) - len(report.step_history))
    rows = (
        (i, float(o), float(g), "" if s is None else float(s))
        for i, (o, g, s) in enumerate(zip(report.objective_history, report.gradient_norm_history, steps))
    )
    return write_table_csv(("iteration", "objective", "gradient_norm", "step"), rows, path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(data: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path
