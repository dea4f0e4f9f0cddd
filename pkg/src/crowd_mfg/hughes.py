"""Classical Hughes model: density-dependent Eikonal equation plus an
explicit finite-volume conservation law with viscosity and Robin outflow.

The potential is the weighted distance to the exits, so pedestrians move
down its gradient with flux ``-rho f(rho)^2 dphi/dx``, ``f = rho_max - rho``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Field, Grid, ModelSpec, Solution, SolverConfig, Trajectory, centered_gradient

logger = logging.getLogger(__name__)

F_FLOOR = 1e-6


class CFLError(RuntimeError):
    """Raised when an explicit step would violate the monotonicity bound."""

    def __init__(self, dt: float, dt_max: float, step: int | None = None):
        self.dt, self.dt_max, self.step = dt, dt_max, step
        where = "" if step is None else f" at step {step}"
        super().__init__(f"CFL violated{where}: dt={dt:.3e} > dt_max={dt_max:.3e}")


@dataclass(frozen=True)
class EikonalProblem:
    """``|dphi/dx| = cost`` in the domain, ``phi = 0`` at exit endpoints."""

    grid: Grid
    cost: Field
    left_exit: bool
    right_exit: bool

    def __post_init__(self) -> None:
        if not (self.left_exit or self.right_exit):
            raise ValueError("Eikonal problem needs at least one exit")
        if np.any(self.cost.values <= 0):
            raise ValueError("Eikonal cost must be strictly positive")

    @classmethod
    def from_density(cls, rho: Field, spec: ModelSpec, f_floor: float = F_FLOOR) -> "EikonalProblem":
        """Cost ``1/f(rho)`` with ``f`` floored at ``f_floor`` (cost capped at ``1/f_floor``)."""
        f = np.maximum(spec.rho_max - rho.values, f_floor)
        g = rho.grid
        return cls(g, Field(g, 1.0 / f), g.left_exit, g.right_exit)


def _sweep(phi: np.ndarray, step_cost: np.ndarray) -> np.ndarray:
    """One Gauss-Seidel pass ``phi[i] = min(phi[i], phi[i-1] + step_cost[i])`` in index order.

    The recursion is a running minimum after subtracting the cumulative cost,
    which lets numpy do the pass in one shot.
    """
    c = np.cumsum(step_cost)
    return np.minimum.accumulate(phi - c) + c


def fast_sweep(cost: np.ndarray, h: float, left_exit: bool, right_exit: bool, n_sweeps: int = 2) -> np.ndarray:
    """Upwind fast sweeping for the 1D Eikonal equation on cell centres.

    Exits sit on the boundary faces, half a cell away from the first centre.
    Alternates left-to-right and right-to-left passes; two passes give the
    exact discrete solution in 1D.
    """
    n = cost.size
    phi = np.full(n, np.inf)
    if left_exit:
        phi[0] = 0.5 * h * cost[0]
    if right_exit:
        phi[-1] = min(phi[-1], 0.5 * h * cost[-1])
    step = h * cost
    for s in range(n_sweeps):
        if s % 2 == 0:
            phi = _sweep(phi, np.concatenate(([0.0], step[1:])))
        else:
            phi = _sweep(phi[::-1], np.concatenate(([0.0], step[::-1][1:])))[::-1]
    return phi


def solve_eikonal(p: EikonalProblem) -> Field:
    phi = fast_sweep(p.cost.values, p.grid.h, p.left_exit, p.right_exit)
    return Field(p.grid, phi)


def eikonal_residual(phi: Field, p: EikonalProblem) -> np.ndarray:
    """Per-cell ``|D^+ phi - cost|`` of the discrete upwind Eikonal operator."""
    v, h, n = phi.values, p.grid.h, p.grid.n_cells
    slopes = np.full((3, n), -np.inf)
    slopes[0, 1:] = (v[1:] - v[:-1]) / h
    slopes[1, :-1] = (v[:-1] - v[1:]) / h
    if p.left_exit:
        slopes[2, 0] = v[0] / (0.5 * h)
    if p.right_exit:
        slopes[2, -1] = max(slopes[2, -1], v[-1] / (0.5 * h))
    return np.abs(slopes.max(axis=0) - p.cost.values)


def _flux_functions(rho_max: float):
    peak = rho_max / 3.0

    def g(r):
        return r * (rho_max - r) ** 2

    def demand(r):
        return g(np.minimum(r, peak))

    def supply(r):
        return g(np.maximum(r, peak))

    def lipschitz(a, b):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        gp = lambda r: np.abs((rho_max - r) * (rho_max - 3.0 * r))  # noqa: E731
        out = np.maximum(gp(lo), gp(hi))
        inner = (lo <= 2.0 * rho_max / 3.0) & (hi >= 2.0 * rho_max / 3.0)
        return np.where(inner, np.maximum(out, rho_max**2 / 3.0), out)

    return demand, supply, lipschitz


def face_fluxes(rho: np.ndarray, phi: np.ndarray, grid: Grid, spec: ModelSpec):
    """Total rightward flux on all ``n+1`` faces and the advective part on interior faces.

    Advection uses the Godunov (demand/supply) flux of ``g = rho f^2`` with
    speed ``|dphi/dx|`` and direction ``-sign(dphi/dx)``, which keeps the
    update monotone and bounded by ``rho_max``.
    """
    h, rm = grid.h, spec.rho_max
    r = np.clip(rho, 0.0, rm)
    demand, supply, _ = _flux_functions(rm)
    dphi = np.diff(phi)
    speed = np.abs(dphi) / h
    right = speed * np.minimum(demand(r[:-1]), supply(r[1:]))
    left = speed * np.minimum(demand(r[1:]), supply(r[:-1]))
    adv = np.where(dphi < 0.0, right, -left)
    J = np.zeros(grid.n_cells + 1)
    J[1:-1] = adv - spec.diffusion * np.diff(rho) / h
    if grid.left_exit:
        J[0] = -spec.beta * rho[0]
    if grid.right_exit:
        J[-1] = spec.beta * rho[-1]
    return J, adv


def max_stable_dt(rho: np.ndarray, phi: np.ndarray, grid: Grid, spec: ModelSpec) -> float:
    """Largest step for which the explicit update stays monotone (and so within ``[0, rho_max]``)."""
    h = grid.h
    _, _, lipschitz = _flux_functions(spec.rho_max)
    r = np.clip(rho, 0.0, spec.rho_max)
    face = np.zeros(grid.n_cells + 1)
    face[1:-1] = np.abs(np.diff(phi)) / h * lipschitz(r[:-1], r[1:]) / h + spec.diffusion / h**2
    if grid.left_exit:
        face[0] = spec.beta / h
    if grid.right_exit:
        face[-1] = spec.beta / h
    rate = float(np.max(face[:-1] + face[1:]))
    return np.inf if rate == 0.0 else 1.0 / rate


def hughes_step(rho: Field, phi: Field, spec: ModelSpec, dt: float, check_cfl: bool = True) -> Field:
    """Advance the density one explicit step with the potential frozen."""
    grid = rho.grid
    if check_cfl:
        dt_max = max_stable_dt(rho.values, phi.values, grid, spec)
        if dt > dt_max:
            raise CFLError(dt, dt_max)
    J, _ = face_fluxes(rho.values, phi.values, grid, spec)
    return Field(grid, rho.values - dt / grid.h * np.diff(J))


def exit_outflux(rho: np.ndarray, grid: Grid, spec: ModelSpec) -> float:
    """Total rate of mass leaving through the exits, ``sum beta rho_boundary``."""
    out = 0.0
    if grid.left_exit:
        out += spec.beta * rho[0]
    if grid.right_exit:
        out += spec.beta * rho[-1]
    return float(out)


def _cell_velocity_flux(rho, phi, grid, spec):
    r = np.clip(rho, 0.0, spec.rho_max)
    grad = centered_gradient(phi, grid.h, one_sided=True)
    v = -((spec.rho_max - r) ** 2) * grad
    return v, r * v


def run_hughes(rho0: Field, spec: ModelSpec, cfg: SolverConfig, f_floor: float = F_FLOOR) -> Solution:
    """Alternate Eikonal solves and explicit density steps up to ``cfg.T``.

    Frames are recorded every ``cfg.output_dt`` (every step when unset).
    """
    grid = rho0.grid
    n_steps = int(round(cfg.T / cfg.dt))
    stride = 1 if cfg.output_dt is None else max(1, int(round(cfg.output_dt / cfg.dt)))
    if n_steps % stride:
        raise ValueError(f"output_dt={cfg.output_dt} must divide T={cfg.T} in steps of dt={cfg.dt}")
    n_rec = n_steps // stride + 1
    rho_rec = np.empty((n_rec, grid.n_cells))
    phi_rec = np.empty_like(rho_rec)
    v_rec = np.empty_like(rho_rec)
    j_rec = np.empty_like(rho_rec)

    h = grid.h
    rho = np.array(rho0.values, dtype=float)
    for k in range(n_steps + 1):
        cost = 1.0 / np.maximum(spec.rho_max - rho, f_floor)
        phi = fast_sweep(cost, h, grid.left_exit, grid.right_exit)
        if k % stride == 0:
            m = k // stride
            rho_rec[m], phi_rec[m] = rho, phi
            v_rec[m], j_rec[m] = _cell_velocity_flux(rho, phi, grid, spec)
        if k == n_steps:
            break
        dt_max = max_stable_dt(rho, phi, grid, spec)
        if cfg.dt > dt_max:
            raise CFLError(cfg.dt, dt_max, step=k)
        J, _ = face_fluxes(rho, phi, grid, spec)
        rho = rho - cfg.dt / h * np.diff(J)
    times = np.linspace(0.0, n_steps * cfg.dt, n_rec)
    logger.debug("hughes run: %d steps, %d frames", n_steps, n_rec)
    return Solution(
        rho=Trajectory(grid, times, rho_rec),
        phi=Trajectory(grid, times, phi_rec),
        v=Trajectory(grid, times, v_rec),
        j=Trajectory(grid, times, j_rec),
    )
