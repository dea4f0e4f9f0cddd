"""Built-in and file-based initial densities, as exact cell averages."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from ..core import Field, Grid

# (lo, hi, height) pieces of the evacuation test data
THREE_GROUPS = ((-0.8, -0.6, 0.8), (-0.3, 0.3, 0.6), (0.4, 0.8, 0.95))
SINGLE_BUMP = ((-0.25, 0.4, 0.5),)


def piecewise_constant(grid: Grid, pieces) -> np.ndarray:
    """Cell averages of a sum of indicator functions ``height * 1[lo, hi]``."""
    f = grid.faces
    out = np.zeros(grid.n_cells)
    for lo, hi, height in pieces:
        overlap = np.clip(np.minimum(f[1:], hi) - np.maximum(f[:-1], lo), 0.0, None)
        out += height * overlap / grid.h
    return out


def _args(text: str, name: str, count: int) -> list[float]:
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if len(parts) != count:
        raise ValueError(f"{name} takes {count} argument(s), got {len(parts)}")
    return [float(p) for p in parts]


def initial_datum(spec: str, grid: Grid, base_dir: str | Path = ".") -> Field:
    """Evaluate a datum description such as ``constant(0.3)`` or ``three_groups``.

    Recognised forms: ``constant(c)``, ``three_groups``, ``bump(lo, hi, height)``,
    ``single_bump`` and ``tabulated(file)``. A tabulated file holds ``x,rho``
    rows and is interpolated linearly at the cell centres.
    """
    m = re.fullmatch(r"\s*([a-z_]+)\s*(?:\((.*)\))?\s*", spec)
    if m is None:
        raise ValueError(f"cannot parse initial datum {spec!r}")
    name, arg = m.group(1), m.group(2)
    if name == "constant":
        (c,) = _args(arg or "", name, 1)
        values = np.full(grid.n_cells, c)
    elif name == "three_groups":
        values = piecewise_constant(grid, THREE_GROUPS)
    elif name == "single_bump":
        values = piecewise_constant(grid, SINGLE_BUMP)
    elif name == "bump":
        lo, hi, height = _args(arg or "", name, 3)
        if not hi > lo:
            raise ValueError(f"bump needs lo < hi, got [{lo}, {hi}]")
        values = piecewise_constant(grid, ((lo, hi, height),))
    elif name == "tabulated":
        if not arg:
            raise ValueError("tabulated needs a file name")
        path = Path(arg.strip().strip("'\""))
        if not path.is_absolute():
            path = Path(base_dir) / path
        if not path.exists():
            raise ValueError(f"initial datum file {path} does not exist")
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        if data.shape[1] < 2:
            raise ValueError(f"{path} needs two columns x,rho")
        order = np.argsort(data[:, 0])
        values = np.interp(grid.centers, data[order, 0], data[order, 1])
    else:
        raise ValueError(f"unknown initial datum {name!r}")
    if np.any(values < 0):
        raise ValueError("initial density must be nonnegative")
    return Field(grid, values)
