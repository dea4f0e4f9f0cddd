"""Monte Carlo particle oracle for the continuum solvers.

Each pedestrian follows ``dX = V(X, t) dt + sigma dW`` (Euler-Maruyama).
Walls reflect specularly; exits either reflect too (``"reflect"``, the
zero-outflux limit) or absorb (``"absorb"``, the infinite-rate limit).
The histogram of surviving particles is compared with the grid density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Field, ModelSpec, Trajectory

REFLECT = "reflect"
ABSORB = "absorb"


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Final state of a particle simulation.

    ``exit_times`` is ``inf`` for particles still inside at the horizon.
    ``action`` is the per-particle path integral of ``|v(X(t), t)|^2`` up to
    the exit time or the horizon.
    """

    positions: np.ndarray
    alive: np.ndarray
    exit_times: np.ndarray
    action: np.ndarray
    seed: int | None
    sigma: float
    horizon: float
    mass: float

    @property
    def n_particles(self) -> int:
        return self.positions.size

    @property
    def alive_fraction(self) -> float:
        return float(np.mean(self.alive))


def sample_initial(rho0: Field, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` positions from the piecewise-constant density ``rho0``."""
    w = np.clip(np.asarray(rho0.values, dtype=float), 0.0, None)
    total = w.sum()
    if total <= 0:
        raise ValueError("initial density has no mass to sample")
    g = rho0.grid
    cells = rng.choice(g.n_cells, size=n, p=w / total)
    return g.x_min + (cells + rng.random(n)) * g.h


def _fold(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Specular reflection into ``[lo, hi]``, also for overshoots longer than the interval."""
    length = hi - lo
    y = np.mod(x - lo, 2.0 * length)
    return lo + np.where(y > length, 2.0 * length - y, y)


def histogram_density(positions: np.ndarray, grid, weight: float) -> np.ndarray:
    """Cell density of ``positions`` when every particle carries mass ``weight``."""
    cells = np.clip(((positions - grid.x_min) / grid.h).astype(int), 0, grid.n_cells - 1)
    return np.bincount(cells, minlength=grid.n_cells) * (weight / grid.h)


def simulate_particles(
    v: Trajectory,
    rho0: Field,
    spec: ModelSpec,
    n_particles: int,
    dt_sde: float,
    seed: int | None = 0,
    boundary: str = REFLECT,
    positions: np.ndarray | None = None,
) -> tuple[Trajectory, ParticleEnsemble]:
    """Euler-Maruyama ensemble driven by the velocity control ``v``.

    On the step from ``s`` to ``s + dt_sde`` the particles use the frame of
    ``v`` that the implicit scheme applies on the interval containing ``s``
    (piecewise constant in time) and linear interpolation between cell
    centres in space. ``dt_sde`` must divide the frame spacing of ``v``.

    Returns the empirical density on ``v``'s grid and times, normalised so
    that its mass equals the alive fraction times the initial mass, and the
    final ensemble. Explicit starting ``positions`` replace sampling from
    ``rho0``, which then only provides the mass.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    if boundary not in (REFLECT, ABSORB):
        raise ValueError(f"boundary mode must be {REFLECT!r} or {ABSORB!r}, got {boundary!r}")
    grid = v.grid
    times = v.times
    frame_dt = v.dt
    if len(v) > 1:
        sub = int(round(frame_dt / dt_sde))
        if sub < 1 or abs(sub * dt_sde - frame_dt) > 1e-9 * frame_dt:
            raise ValueError(f"dt_sde={dt_sde} must divide the velocity time step {frame_dt}")
    else:
        sub = 0
    h_sde = frame_dt / sub if sub else 0.0

    rng = np.random.default_rng(seed)
    if positions is None:
        x = sample_initial(rho0, n_particles, rng)
    else:
        x = np.array(positions, dtype=float).reshape(-1)
        if x.size != n_particles:
            raise ValueError(f"got {x.size} starting positions for {n_particles} particles")
    mass = rho0.mass()
    lo, hi = grid.x_min, grid.x_max
    absorb_l = boundary == ABSORB and grid.left_exit
    absorb_r = boundary == ABSORB and grid.right_exit
    alive = np.ones(n_particles, dtype=bool)
    exit_times = np.full(n_particles, np.inf)
    action = np.zeros(n_particles)
    centers = grid.centers
    noise = spec.sigma * math.sqrt(h_sde)

    dens = np.empty((times.size, grid.n_cells))
    per_particle = mass / n_particles
    dens[0] = histogram_density(x, grid, per_particle)
    for k in range(1, times.size):
        vk = v.values[k]
        for m in range(sub):
            t0 = times[k - 1] + m * h_sde
            idx = np.flatnonzero(alive)
            xi = x[idx]
            vel = np.interp(xi, centers, vk)
            step = vel * h_sde + noise * rng.standard_normal(idx.size)
            xn = xi + step
            frac = np.ones(idx.size)
            gone = np.zeros(idx.size, dtype=bool)
            if absorb_l:
                hit = xn < lo
                frac = np.where(hit, (xi - lo) / (xi - xn), frac)
                gone |= hit
            if absorb_r:
                hit = xn > hi
                frac = np.where(hit, np.minimum(frac, (hi - xi) / (xn - xi)), frac)
                gone |= hit
            action[idx] += vel**2 * h_sde * frac
            if gone.any():
                out = idx[gone]
                exit_times[out] = t0 + frac[gone] * h_sde
                alive[out] = False
            keep = ~gone
            x[idx[keep]] = _fold(xn[keep], lo, hi)
        dens[k] = histogram_density(x[alive], grid, per_particle)

    ensemble = ParticleEnsemble(
        positions=x,
        alive=alive,
        exit_times=exit_times,
        action=action,
        seed=seed,
        sigma=spec.sigma,
        horizon=float(times[-1]),
        mass=mass,
    )
    return Trajectory(grid, times, dens), ensemble


def empirical_cost(ensemble: ParticleEnsemble, v: Trajectory, alpha: float) -> float:
    """Monte Carlo mean of ``1/2 int_0^T_exit |v|^2 dt + alpha/2 T_exit``.

    Particles still inside at the horizon contribute the truncated integral
    and the horizon as their exit time. Multiply by the initial mass to
    compare with the continuum objective.
    """
    T = float(v.times[-1])
    t_exit = np.minimum(ensemble.exit_times, T)
    return float(np.mean(0.5 * ensemble.action + 0.5 * alpha * t_exit))


def empirical_cost_stderr(ensemble: ParticleEnsemble, v: Trajectory, alpha: float) -> float:
    """Standard error of :func:`empirical_cost`."""
    T = float(v.times[-1])
    c = 0.5 * ensemble.action + 0.5 * alpha * np.minimum(ensemble.exit_times, T)
    return float(np.std(c, ddof=1) / math.sqrt(c.size)) if c.size > 1 else math.inf


def binomial_l1_bound(reference: np.ndarray, grid, n_particles: int, mass: float) -> float:
    """Expected-size bound for the discrete ``L1`` sampling error of a histogram.

    Bin ``i`` holds a Binomial(N, p_i) count with ``p_i = rho_i h / mass``,
    so its contribution to ``sum |rho_emp - rho| h`` has standard deviation
    ``mass sqrt(p_i (1 - p_i) / N)``; the bound sums these.
    """
    p = np.clip(np.asarray(reference, dtype=float) * grid.h / mass, 0.0, 1.0)
    return float(mass * np.sum(np.sqrt(p * (1.0 - p) / n_particles)))


def l1_distance(a: np.ndarray, b: np.ndarray, h: float) -> float:
    return float(np.sum(np.abs(np.asarray(a) - np.asarray(b))) * h)
