"""Grids, fields, model specification and the constitutive functions.

Everything here is immutable and side-effect free; the solvers in
:mod:`crowd_mfg.hughes`, :mod:`crowd_mfg.mfg` and :mod:`crowd_mfg.oracle`
consume these types.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

EXIT = "exit"
WALL = "wall"
_TAGS = (EXIT, WALL)

#: Distinguished return value of :func:`eval_K` for ``j != 0`` on a degenerate mobility.
INFEASIBLE = math.inf


class Mobility(str, enum.Enum):
    LINEAR = "linear"  # F = G = H = rho
    HUGHES = "hughes"  # F = G = H = rho (rho_max - rho)^2
    TABULATED = "tabulated"


class Energy(str, enum.Enum):
    LINEAR = "linear"  # E = alpha rho
    EXPONENTIAL = "exponential"  # E = exp(a rho)


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred 1D mesh on ``[x_min, x_max]``.

    ``tags`` holds the boundary type of the left and right endpoint,
    each one of ``"exit"`` or ``"wall"``.
    """

    x_min: float
    x_max: float
    n_cells: int
    tags: tuple[str, str] = (EXIT, EXIT)

    def __post_init__(self) -> None:
        if not self.x_max > self.x_min:
            raise ValueError(f"inverted bounds: x_min={self.x_min} >= x_max={self.x_max}")
        if int(self.n_cells) < 2:
            raise ValueError(f"n_cells must be >= 2, got {self.n_cells}")
        tags = tuple(str(t).lower() for t in self.tags)
        if len(tags) != 2 or any(t not in _TAGS for t in tags):
            raise ValueError(f"tags must be two of {_TAGS}, got {self.tags!r}")
        object.__setattr__(self, "n_cells", int(self.n_cells))
        object.__setattr__(self, "tags", tags)

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.h

    @property
    def faces(self) -> np.ndarray:
        return self.x_min + np.arange(self.n_cells + 1) * self.h

    @property
    def left_exit(self) -> bool:
        return self.tags[0] == EXIT

    @property
    def right_exit(self) -> bool:
        return self.tags[1] == EXIT

    def nearest_cell(self, x: float) -> int:
        if not self.x_min <= x <= self.x_max:
            raise ValueError(f"position {x} outside [{self.x_min}, {self.x_max}]")
        return int(min(self.n_cells - 1, max(0, math.floor((x - self.x_min) / self.h))))

    def mirror_index(self) -> np.ndarray:
        """Index map i -> n-1-i, used for symmetry checks."""
        return np.arange(self.n_cells)[::-1]


def build_grid(x_min: float, x_max: float, n_cells: int, tags: Sequence[str] = (EXIT, EXIT)) -> Grid:
    return Grid(float(x_min), float(x_max), n_cells, tuple(tags))


@dataclass(frozen=True, eq=False)
class Field:
    """One scalar per cell of ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_cells,):
            raise ValueError(f"expected {self.grid.n_cells} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.h)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Space-time scalar data: ``values[k, i]`` is the value in cell ``i`` at ``times[k]``."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        times = np.array(self.times, dtype=float)
        values = np.array(self.values, dtype=float)
        if times.ndim != 1 or times.size < 1:
            raise ValueError("times must be a non-empty 1D sequence")
        if values.shape != (times.size, self.grid.n_cells):
            raise ValueError(f"values shape {values.shape} != ({times.size}, {self.grid.n_cells})")
        if times.size > 1:
            dt = np.diff(times)
            if np.any(dt <= 0):
                raise ValueError("times must be strictly increasing")
            if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12):
                raise ValueError("times must be uniformly spaced")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def __len__(self) -> int:
        return self.times.size

    def frame(self, k: int) -> Field:
        return Field(self.grid, self.values[k])

    @property
    def frames(self) -> list[Field]:
        return [self.frame(k) for k in range(len(self))]

    def index_of(self, t: float) -> int:
        """Index of the frame closest to time ``t``."""
        return int(np.argmin(np.abs(self.times - t)))

    def at(self, t: float) -> np.ndarray:
        return self.values[self.index_of(t)]

    def masses(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.grid.h

    @classmethod
    def constant(cls, grid: Grid, times: np.ndarray, value: float | np.ndarray = 0.0) -> "Trajectory":
        times = np.asarray(times, dtype=float)
        return cls(grid, times, np.broadcast_to(np.asarray(value, dtype=float), (times.size, grid.n_cells)))


def time_grid(dt: float, T: float) -> np.ndarray:
    """Uniform times ``0, dt, ..., T``; ``T`` must be an integer multiple of ``dt``."""
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a positive integer multiple of dt={dt}")
    return np.linspace(0.0, T, steps + 1)


@dataclass(frozen=True)
class ModelSpec:
    """Constitutive functions and parameters of the crowd model.

    Under the standing assumption ``F = G = H`` a single mobility function
    plays all three roles; ``mobility`` picks it. ``table`` holds samples
    ``(rho_nodes, values)`` for the tabulated preset.
    """

    mobility: Mobility = Mobility.HUGHES
    energy: Energy = Energy.LINEAR
    sigma: float = 0.1
    beta: float = 1.0
    alpha: float = 1.0
    a: float = 3.0
    rho_max: float = 1.0
    table: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    _spline: CubicSpline | None = field(default=None, init=False, repr=False, compare=False)
    _peak: float = field(default=0.0, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mobility", Mobility(self.mobility))
        object.__setattr__(self, "energy", Energy(self.energy))
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.rho_max > 0:
            raise ValueError(f"rho_max must be > 0, got {self.rho_max}")
        if self.mobility is Mobility.TABULATED:
            if self.table is None:
                raise ValueError("tabulated mobility needs a table of (rho, value) samples")
            nodes, vals = (np.asarray(t, dtype=float) for t in self.table)
            if nodes.shape != vals.shape or nodes.size < 4:
                raise ValueError("mobility table needs >= 4 matching samples")
            if nodes[0] > 0 or nodes[-1] < self.rho_max or np.any(np.diff(nodes) <= 0):
                raise ValueError("mobility table must cover [0, rho_max] with increasing nodes")
            if np.any(vals < 0):
                raise ValueError("tabulated mobility must be nonnegative")
            spline = CubicSpline(nodes, vals)
            samples = np.linspace(0.0, self.rho_max, 4097)
            object.__setattr__(self, "_spline", spline)
            object.__setattr__(self, "_peak", float(samples[np.argmax(spline(samples))]))

    @property
    def diffusion(self) -> float:
        """Diffusion coefficient sigma^2 / 2."""
        return 0.5 * self.sigma**2

    def replace(self, **changes) -> "ModelSpec":
        return dataclasses.replace(self, **changes)


def _inside(spec: ModelSpec, rho: np.ndarray) -> np.ndarray:
    return (rho >= 0.0) & (rho <= spec.rho_max)


def _mobility(spec: ModelSpec, rho: np.ndarray) -> np.ndarray:
    if spec.mobility is Mobility.LINEAR:
        return rho.copy()
    if spec.mobility is Mobility.HUGHES:
        return rho * (spec.rho_max - rho) ** 2
    return spec._spline(rho)


def _mobility_prime(spec: ModelSpec, rho: np.ndarray) -> np.ndarray:
    if spec.mobility is Mobility.LINEAR:
        return np.ones_like(rho)
    if spec.mobility is Mobility.HUGHES:
        return (spec.rho_max - rho) * (spec.rho_max - 3.0 * rho)
    return spec._spline(rho, 1)


def eval_mobility(spec: ModelSpec, which: str, rho):
    """Value of F, G or H at ``rho``; zero outside ``[0, rho_max]``.

    All three coincide for the built-in presets (and H = G^2/F holds trivially).
    """
    if which not in ("F", "G", "H"):
        raise ValueError(f"unknown mobility {which!r}")
    r = np.asarray(rho, dtype=float)
    out = np.where(_inside(spec, r), _mobility(spec, np.clip(r, 0.0, spec.rho_max)), 0.0)
    return float(out) if out.ndim == 0 else out


def eval_mobility_derivative(spec: ModelSpec, which: str, rho):
    if which not in ("F", "G", "H"):
        raise ValueError(f"unknown mobility {which!r}")
    r = np.asarray(rho, dtype=float)
    out = np.where(_inside(spec, r), _mobility_prime(spec, np.clip(r, 0.0, spec.rho_max)), 0.0)
    return float(out) if out.ndim == 0 else out


def eval_energy(spec: ModelSpec, rho):
    """Return ``(E(rho), E'(rho))``."""
    r = np.asarray(rho, dtype=float)
    if spec.energy is Energy.LINEAR:
        e, de = spec.alpha * r, np.full_like(r, spec.alpha)
    else:
        e = np.exp(spec.a * r)
        de = spec.a * e
    if r.ndim == 0:
        return float(e), float(de)
    return e, de


def eval_K(j, rho, spec: ModelSpec):
    """Extended momentum cost: j^2/H(rho), 0 if j = H = 0, :data:`INFEASIBLE` if only H = 0."""
    jj = np.asarray(j, dtype=float)
    H = np.asarray(eval_mobility(spec, "H", rho), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(H != 0.0, jj**2 / np.where(H != 0.0, H, 1.0), np.where(jj == 0.0, 0.0, INFEASIBLE))
    return float(out) if out.ndim == 0 else out


def face_mobility(spec: ModelSpec, donor: np.ndarray, receiver: np.ndarray):
    """Two-point mobility for a flux leaving ``donor`` and entering ``receiver``.

    Returns ``(M, dM/d donor, dM/d receiver)``. M is nondecreasing in the
    donor and nonincreasing in the receiver value, with ``M(r, r) = F(r)``.
    For the crowding preset the saturation factor is taken from the receiving
    cell, so no mass can enter a cell at ``rho_max``.
    """
    rm = spec.rho_max
    a = np.clip(donor, 0.0, rm)
    b = np.clip(receiver, 0.0, rm)
    da_in = ((donor > 0.0) & (donor < rm)).astype(float)
    db_in = ((receiver > 0.0) & (receiver < rm)).astype(float)
    if spec.mobility is Mobility.LINEAR:
        return a, da_in, np.zeros_like(b)
    if spec.mobility is Mobility.HUGHES:
        s = (rm - b) ** 2
        return a * s, s * da_in, -2.0 * a * (rm - b) * db_in
    # Godunov demand/supply flux for a general unimodal tabulated mobility.
    peak = spec._peak
    da_ = np.minimum(a, peak)
    sb = np.maximum(b, peak)
    demand, supply = spec._spline(da_), spec._spline(sb)
    use_demand = demand <= supply
    m = np.where(use_demand, demand, supply)
    dd = np.where(use_demand, spec._spline(da_, 1) * (a < peak) * da_in, 0.0)
    dr = np.where(use_demand, 0.0, spec._spline(sb, 1) * (b > peak) * db_in)
    return m, dd, dr


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping, Newton and descent controls."""

    dt: float = 0.1
    T: float = 3.0
    newton_tol: float = 1e-6
    newton_max_iter: int = 50
    tau: float = 1.0
    descent_tol: float = 1e-6
    descent_max_iter: int = 500
    armijo: bool = True
    grad_tol: float | None = None  # defaults to 10 * descent_tol
    output_dt: float | None = None  # recording interval for explicit solvers
    metric: str = "mobility"  # descent metric: "mobility" (F-weighted) or "l2"

    def __post_init__(self) -> None:
        if self.metric not in ("l2", "mobility"):
            raise ValueError(f"metric must be 'l2' or 'mobility', got {self.metric!r}")
        for name in ("dt", "T", "newton_tol", "tau", "descent_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.dt > self.T:
            raise ValueError(f"dt={self.dt} exceeds T={self.T}")
        if self.newton_max_iter < 1 or self.descent_max_iter < 1:
            raise ValueError("iteration limits must be >= 1")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ValueError(f"grad_tol must be > 0, got {self.grad_tol}")

    @property
    def gradient_tolerance(self) -> float:
        return 10.0 * self.descent_tol if self.grad_tol is None else self.grad_tol

    @property
    def times(self) -> np.ndarray:
        return time_grid(self.dt, self.T)

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Solution:
    """Density plus whichever of potential, velocity and flux a solver produces."""

    rho: Trajectory
    phi: Trajectory | None = None
    v: Trajectory | None = None
    j: Trajectory | None = None

    @property
    def grid(self) -> Grid:
        return self.rho.grid

    @property
    def times(self) -> np.ndarray:
        return self.rho.times

    def channels(self) -> dict[str, Trajectory | None]:
        return {"rho": self.rho, "phi": self.phi, "v": self.v, "j": self.j}


def centered_gradient(values: np.ndarray, h: float, one_sided: bool = True) -> np.ndarray:
    """Cell-centred derivative along the last axis.

    Interior cells use central differences. At the two end cells
    ``one_sided=True`` gives the one-sided difference; otherwise the
    neighbour outside the domain is mirrored, i.e. half the one-sided value.
    """
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    out[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2.0 * h)
    scale = 1.0 if one_sided else 0.5
    out[..., 0] = scale * (values[..., 1] - values[..., 0]) / h
    out[..., -1] = scale * (values[..., -1] - values[..., -2]) / h
    return out
