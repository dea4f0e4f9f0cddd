"""Implicit finite-volume discretization of the controlled crowd equation
and its exact discrete adjoint.

Forward problem, one implicit Euler step from ``rho_old`` to ``rho``::

    R(rho) = (rho - rho_old)/dt + (J[i+1/2] - J[i-1/2])/h = 0

with total face flux ``J = M v_f - D (rho_R - rho_L)/h`` on interior faces,
``D = sigma^2/2``, face velocity ``v_f`` the mean of the two cell
velocities, ``M`` the upwinded two-point mobility from
:func:`crowd_mfg.core.face_mobility`. Walls carry zero total flux and exits
carry the outflux ``beta * rho`` of the adjacent cell.

The adjoint is the transpose of the linearized step. It discretizes
``-phi_t - D phi_xx - G'(rho) v phi_x = -F'(rho) v^2/2 - E'(rho)/2`` with
``D dphi/dn + beta phi = 0`` on exits and ``dphi/dn = 0`` on walls, and
makes the reduced gradient exact for the discrete objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from ..core import Grid, ModelSpec, Mobility, SolverConfig, Trajectory, eval_energy, eval_mobility, eval_mobility_derivative, face_mobility

logger = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    """Newton's method did not reach the residual tolerance."""

    def __init__(self, step: int, iterate: np.ndarray, residual: float, iterations: int):
        self.step, self.iterate, self.residual, self.iterations = step, iterate, residual, iterations
        super().__init__(f"Newton failed at time step {step}: residual {residual:.3e} after {iterations} iterations")


class AdjointError(RuntimeError):
    """Singular linear system in the backward sweep."""


@dataclass(frozen=True)
class StepOperator:
    """Residual and tridiagonal Jacobian pieces of one implicit step at fixed velocity."""

    grid: Grid
    spec: ModelSpec
    v: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "v_face", 0.5 * (self.v[:-1] + self.v[1:]))
        beta_l = self.spec.beta if self.grid.left_exit else 0.0
        beta_r = self.spec.beta if self.grid.right_exit else 0.0
        object.__setattr__(self, "beta_lr", (beta_l, beta_r))

    def _upwind(self, rho: np.ndarray):
        """Upwind face mobility and its derivatives w.r.t. the left and right cell."""
        left, right = rho[:-1], rho[1:]
        m_lr, dm_l_don, dm_r_rec = face_mobility(self.spec, left, right)
        m_rl, dm_r_don, dm_l_rec = face_mobility(self.spec, right, left)
        pos = self.v_face >= 0.0
        m = np.where(pos, m_lr, m_rl)
        dm_left = np.where(pos, dm_l_don, dm_l_rec)
        dm_right = np.where(pos, dm_r_rec, dm_r_don)
        return m, dm_left, dm_right

    def fluxes(self, rho: np.ndarray) -> np.ndarray:
        """Total rightward flux on the ``n+1`` faces."""
        h, D = self.grid.h, self.spec.diffusion
        m, _, _ = self._upwind(rho)
        J = np.empty(rho.size + 1)
        J[1:-1] = self.v_face * m - D * np.diff(rho) / h
        J[0] = -self.beta_lr[0] * rho[0]
        J[-1] = self.beta_lr[1] * rho[-1]
        return J

    def divergence(self, rho: np.ndarray) -> np.ndarray:
        return np.diff(self.fluxes(rho)) / self.grid.h

    def residual(self, rho: np.ndarray, rho_old: np.ndarray) -> np.ndarray:
        return (rho - rho_old) / self.dt + self.divergence(rho)

    def jacobian_banded(self, rho: np.ndarray, with_time: bool = True) -> np.ndarray:
        """``d residual / d rho`` in LAPACK banded layout (1 sub-, 1 super-diagonal)."""
        h, D = self.grid.h, self.spec.diffusion
        _, dm_left, dm_right = self._upwind(rho)
        a = self.v_face * dm_left + D / h  # dJ_f / d rho_left
        b = self.v_face * dm_right - D / h  # dJ_f / d rho_right
        n = rho.size
        ab = np.zeros((3, n))
        diag = np.zeros(n)
        diag[:-1] += a
        diag[1:] -= b
        diag[0] += self.beta_lr[0]
        diag[-1] += self.beta_lr[1]
        ab[1] = diag / h + (1.0 / self.dt if with_time else 0.0)
        ab[0, 1:] = b / h
        ab[2, :-1] = -a / h
        return ab

    def velocity_adjoint(self, rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """``(d divergence / d v)^T phi``: minus the mobility-weighted gradient of ``phi``."""
        m, _, _ = self._upwind(rho)
        w = 0.5 * m * np.diff(phi) / self.grid.h
        out = np.zeros(rho.size)
        out[:-1] -= w
        out[1:] -= w
        return out


def l2_norm(r: np.ndarray, h: float) -> float:
    return float(np.sqrt(h * np.dot(r, r)))


def _bounds(spec: ModelSpec) -> tuple[float, float]:
    # the scheme keeps rho >= 0, and rho <= rho_max when the mobility vanishes there
    return 0.0, (spec.rho_max if spec.mobility is Mobility.HUGHES else np.inf)


def newton_step_solve(
    op: StepOperator,
    rho_old: np.ndarray,
    tol: float,
    max_iter: int,
    step_index: int = 0,
    guess: np.ndarray | None = None,
) -> tuple[np.ndarray, int, float]:
    """Damped, projected Newton for one implicit step; returns ``(rho, iterations, residual)``.

    Iterates are kept in the invariant interval of the scheme, which stops
    them from parking on the kinks of the clipped mobility.
    """
    h = op.grid.h
    lo, hi = _bounds(op.spec)
    rho = np.clip(rho_old if guess is None else guess, lo, hi)
    res = op.residual(rho, rho_old)
    norm = l2_norm(res, h)
    for it in range(1, max_iter + 1):
        if norm <= tol:
            return rho, it - 1, norm
        try:
            delta = solve_banded((1, 1), op.jacobian_banded(rho), -res)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NewtonError(step_index, rho, norm, it) from exc
        lam = 1.0
        for _ in range(21):
            trial = np.clip(rho + lam * delta, lo, hi)
            res_trial = op.residual(trial, rho_old)
            norm_trial = l2_norm(res_trial, h)
            if norm_trial <= (1.0 - 1e-4 * lam) * norm or lam < 2.0**-20:
                break
            lam *= 0.5
        scale = 1.0 + float(np.max(np.abs(rho)))
        rho, res, norm = trial, res_trial, norm_trial
        if lam == 1.0 and float(np.max(np.abs(delta))) <= 1e-14 * scale:
            # update is at round-off level; the residual cannot get smaller
            return rho, it, norm
    if norm <= tol:
        return rho, max_iter, norm
    raise NewtonError(step_index, rho, norm, max_iter)


def robust_step_solve(
    op: StepOperator,
    rho_old: np.ndarray,
    tol: float,
    max_iter: int,
    step_index: int = 0,
    guess: np.ndarray | None = None,
    depth: int = 8,
) -> tuple[np.ndarray, int, float]:
    """Newton with fallbacks that change only the starting point.

    Tries ``guess``, then ``rho_old``, then continuation in the velocity
    (solve with ``v/2`` and start from that). The discrete solution is the
    same whichever start succeeds.
    """
    if guess is not None:
        try:
            return newton_step_solve(op, rho_old, tol, max_iter, step_index, guess)
        except NewtonError:
            pass
    try:
        return newton_step_solve(op, rho_old, tol, max_iter, step_index)
    except NewtonError:
        if depth == 0:
            raise
    half = StepOperator(op.grid, op.spec, 0.5 * op.v, op.dt)
    start, n_half, _ = robust_step_solve(half, rho_old, tol, max_iter, step_index, None, depth - 1)
    rho, n_full, res = newton_step_solve(op, rho_old, tol, max_iter, step_index, start)
    return rho, n_half + n_full, res


@dataclass(frozen=True, eq=False)
class ForwardResult:
    rho: Trajectory
    newton_iterations: np.ndarray
    residuals: np.ndarray


def _check_aligned(v: Trajectory, cfg: SolverConfig) -> np.ndarray:
    times = cfg.times
    if len(v) != times.size or not np.allclose(v.times, times, atol=1e-12 * max(1.0, cfg.T)):
        raise ValueError(f"velocity has {len(v)} frames, solver time grid has {times.size}")
    return times


def forward_solve(v: Trajectory, rho0, spec: ModelSpec, cfg: SolverConfig, guess: Trajectory | None = None) -> Trajectory:
    """Density trajectory driven by the velocity control ``v``.

    ``guess`` (e.g. the density of a nearby control) only seeds Newton.
    """
    return forward_solve_full(v, rho0, spec, cfg, guess).rho


def forward_solve_full(
    v: Trajectory, rho0, spec: ModelSpec, cfg: SolverConfig, guess: Trajectory | None = None
) -> ForwardResult:
    times = _check_aligned(v, cfg)
    grid = v.grid
    values = np.asarray(getattr(rho0, "values", rho0), dtype=float)
    K = times.size - 1
    rho = np.empty((K + 1, grid.n_cells))
    rho[0] = values
    iters = np.zeros(K, dtype=int)
    resid = np.zeros(K)
    for k in range(1, K + 1):
        op = StepOperator(grid, spec, v.values[k], cfg.dt)
        start = None if guess is None else guess.values[k]
        rho[k], iters[k - 1], resid[k - 1] = robust_step_solve(op, rho[k - 1], cfg.newton_tol, cfg.newton_max_iter, k, start)
    return ForwardResult(Trajectory(grid, times, rho), iters, resid)


def running_cost_density(rho: np.ndarray, v: np.ndarray, spec: ModelSpec):
    """Pointwise ``F v^2/2 + E/2`` and its ``rho``-derivative."""
    F = eval_mobility(spec, "F", rho)
    dF = eval_mobility_derivative(spec, "F", rho)
    E, dE = eval_energy(spec, rho)
    return 0.5 * F * v**2 + 0.5 * E, 0.5 * dF * v**2 + 0.5 * dE


def adjoint_solve(rho: Trajectory, v: Trajectory, spec: ModelSpec, cfg: SolverConfig) -> Trajectory:
    """Backward sweep for the adjoint potential, ``phi(., T) = 0``.

    Frame ``k`` holds the multiplier of the step from ``t_k`` to ``t_{k+1}``;
    it is obtained from frame ``k+1`` by one implicit backward step using the
    density and velocity at ``t_{k+1}``.
    """
    times = _check_aligned(v, cfg)
    if len(rho) != times.size:
        raise ValueError("density and velocity trajectories are not aligned")
    grid = rho.grid
    K = times.size - 1
    phi = np.zeros((K + 1, grid.n_cells))
    for k in range(K, 0, -1):
        op = StepOperator(grid, spec, v.values[k], cfg.dt)
        ab = op.jacobian_banded(rho.values[k])
        abT = np.zeros_like(ab)
        abT[1] = ab[1]
        abT[0, 1:] = ab[2, :-1]
        abT[2, :-1] = ab[0, 1:]
        _, q = running_cost_density(rho.values[k], v.values[k], spec)
        rhs = phi[k] / cfg.dt - q
        try:
            phi[k - 1] = solve_banded((1, 1), abT, rhs)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise AdjointError(f"singular adjoint system at time step {k}") from exc
        if not np.all(np.isfinite(phi[k - 1])):
            raise AdjointError(f"non-finite adjoint at time step {k}")
    return Trajectory(grid, times, phi)
