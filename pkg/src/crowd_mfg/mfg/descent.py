"""Objective, reduced gradient and the steepest-descent driver."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..core import Field, ModelSpec, Solution, SolverConfig, Trajectory, centered_gradient, eval_K, eval_mobility
from ..hughes import EikonalProblem, solve_eikonal
from .scheme import StepOperator, adjoint_solve, forward_solve, running_cost_density

logger = logging.getLogger(__name__)


def time_weights(times: np.ndarray) -> np.ndarray:
    """Quadrature weights in time: right-endpoint rule matching implicit Euler.

    The initial frame carries no weight; the control at ``t_k`` acts on the
    step ending at ``t_k``.
    """
    w = np.zeros(times.size)
    w[1:] = np.diff(times)
    return w


def inner(a: Trajectory | np.ndarray, b: Trajectory | np.ndarray, traj: Trajectory) -> float:
    """Space-time ``L^2`` inner product with the solver's quadrature."""
    av = getattr(a, "values", a)
    bv = getattr(b, "values", b)
    w = time_weights(traj.times)
    return float(np.sum(w[:, None] * av * bv) * traj.grid.h)


def norm(a: Trajectory | np.ndarray, traj: Trajectory) -> float:
    return math.sqrt(max(inner(a, a, traj), 0.0))


def evaluate_objective(rho: Trajectory, v: Trajectory, spec: ModelSpec, flux: Trajectory | None = None) -> float:
    """``1/2 int int F(rho)|v|^2 + E(rho)`` on the discrete space-time grid.

    With ``flux`` given, the kinetic term is the momentum cost ``K(j, rho)``
    instead and the result is ``inf`` when ``K`` is infeasible somewhere.
    """
    w = time_weights(rho.times)
    if flux is None:
        dens, _ = running_cost_density(rho.values, v.values, spec)
    else:
        from ..core import eval_energy

        kin = eval_K(flux.values, rho.values, spec)
        E, _ = eval_energy(spec, rho.values)
        with np.errstate(invalid="ignore"):
            dens = 0.5 * kin + 0.5 * E
        dens = np.where(w[:, None] > 0, dens, 0.0)
        if np.any(np.isinf(dens)):
            return math.inf
    return float(np.sum(w[:, None] * dens) * rho.grid.h)


def gradient_field(rho: Trajectory, phi: Trajectory, v: Trajectory, spec: ModelSpec, dt: float | None = None) -> Trajectory:
    """``F(rho) v - G(rho) grad phi`` on every frame.

    ``G grad phi`` is evaluated as the mean of the two face values
    ``M_f (phi_R - phi_L)/h`` next to each cell, with the upwind face
    mobility of the forward scheme; this is the exact ``L^2`` gradient of the
    discrete reduced objective. The initial frame does not influence the
    objective and its gradient is zero.
    """
    grid = rho.grid
    dt = rho.dt if dt is None else dt
    g = np.zeros_like(rho.values)
    F = eval_mobility(spec, "F", rho.values)
    for k in range(1, len(rho)):
        op = StepOperator(grid, spec, v.values[k], dt)
        g[k] = F[k] * v.values[k] + op.velocity_adjoint(rho.values[k], phi.values[k - 1])
    return Trajectory(grid, rho.times, g)


def initial_velocity(rho0: Field, spec: ModelSpec, cfg: SolverConfig) -> tuple[Trajectory, Trajectory]:
    """Eikonal-based start: potential ``-phi_H`` at every time, ``v = (G/F) grad phi``.

    ``phi_H`` is the Hughes potential at the initial density. Its sign is
    flipped so that ``v`` points towards the exits in the forward equation's
    convention. With ``F = G`` the ratio is one, also where ``F`` vanishes.
    """
    phi_h = solve_eikonal(EikonalProblem.from_density(rho0, spec)).values
    times = cfg.times
    phi = Trajectory.constant(rho0.grid, times, -phi_h)
    v = Trajectory.constant(rho0.grid, times, centered_gradient(-phi_h, rho0.grid.h, one_sided=True))
    return v, phi


@dataclass(eq=False)
class DescentReport:
    objective_history: list[float]
    gradient_norm_history: list[float]
    step_history: list[float]
    solution: Solution
    converged: bool
    iterations: int
    message: str = ""
    gradient: Trajectory | None = field(default=None, repr=False)

    @property
    def rho(self) -> Trajectory:
        return self.solution.rho

    @property
    def v(self) -> Trajectory:
        return self.solution.v

    @property
    def phi(self) -> Trajectory:
        return self.solution.phi

    @property
    def objective(self) -> float:
        return self.objective_history[-1]


class DescentError(RuntimeError):
    def __init__(self, iteration: int, cause: Exception):
        self.iteration, self.cause = iteration, cause
        super().__init__(f"descent iteration {iteration}: {cause}")


def _with_first_frame(v: np.ndarray) -> np.ndarray:
    # the t=0 control never enters the scheme; show the one used on the first step
    v = v.copy()
    v[0] = v[1]
    return v


def _metric_weight(rho: Trajectory, spec: ModelSpec, metric: str):
    """Pointwise weight of the descent inner product (1 for plain ``L^2``)."""
    if metric == "l2":
        return 1.0
    F = eval_mobility(spec, "F", rho.values)
    # floor keeps the step finite where the crowd is absent (there g vanishes too)
    return np.maximum(F, 1e-3 * max(float(F.max()), 1e-300))


def _solution(rho: Trajectory, v: Trajectory, phi: Trajectory, spec: ModelSpec) -> Solution:
    F = eval_mobility(spec, "F", rho.values)
    return Solution(rho=rho, phi=phi, v=v, j=Trajectory(rho.grid, rho.times, F * v.values))


def run_descent(
    rho0: Field,
    spec: ModelSpec,
    cfg: SolverConfig,
    v_init: Trajectory | None = None,
    callback=None,
) -> DescentReport:
    """Steepest descent on the velocity control.

    Each iteration solves the forward problem, the adjoint backwards in time,
    and updates ``v <- v - tau g / w`` with ``g = F v - G grad phi``. The
    weight ``w`` is 1 for ``metric="l2"`` and the (floored) mobility ``F`` for
    ``metric="mobility"``, i.e. steepest descent in the ``F``-weighted inner
    product, which does not stall where ``F`` is small. With ``cfg.armijo`` the
    step starts from a Barzilai-Borwein estimate and is halved until the
    sufficient-decrease condition holds; otherwise ``tau`` is fixed.
    Stops when the relative objective change drops below ``descent_tol`` and
    the gradient norm is below ``gradient_tolerance * (1 + |v|)``.
    """
    if v_init is None:
        v_init, _ = initial_velocity(rho0, spec, cfg)
    v = Trajectory(rho0.grid, cfg.times, _with_first_frame(v_init.values))
    gtol = cfg.gradient_tolerance

    def evaluate(vel: Trajectory, it: int, guess: Trajectory | None = None):
        try:
            rho = forward_solve(vel, rho0, spec, cfg, guess)
        except RuntimeError as exc:
            raise DescentError(it, exc) from exc
        return rho, evaluate_objective(rho, vel, spec)

    rho, obj = evaluate(v, 0)
    objs: list[float] = []
    gnorms: list[float] = []
    steps: list[float] = []
    rel_change = math.inf
    converged = False
    message = "maximum iterations reached"
    tau = cfg.tau
    prev = None
    phi = g = None
    for it in range(cfg.descent_max_iter):
        try:
            phi = adjoint_solve(rho, v, spec, cfg)
        except RuntimeError as exc:
            raise DescentError(it, exc) from exc
        g = gradient_field(rho, phi, v, spec, cfg.dt)
        gn, vn = norm(g, rho), norm(v, rho)
        objs.append(obj)
        gnorms.append(gn)
        if callback is not None:
            callback(it, obj, gn)
        stationary = gn <= gtol * (1.0 + vn)
        if stationary and (it == 0 or rel_change < cfg.descent_tol):
            converged, message = True, "converged"
            if it == 0:
                rel_change = 0.0
            break

        w = _metric_weight(rho, spec, cfg.metric)
        d = g.values / w
        slope = inner(g, d, rho)
        if cfg.armijo:
            if prev is not None:
                s = v.values - prev[0]
                y = g.values - prev[1]
                sy = inner(s, y, rho)
                tau = inner(s, w * s, rho) / sy if sy > 0 else 2.0 * tau
                tau = min(max(tau, 1e-10), 1e10)
            trial, accepted = tau, None
            for _ in range(60):
                v_new = Trajectory(v.grid, v.times, _with_first_frame(v.values - trial * d))
                try:
                    rho_new, obj_new = evaluate(v_new, it, rho)
                except DescentError:
                    trial *= 0.5
                    continue
                if obj_new <= obj - 1e-4 * trial * slope:
                    accepted = (v_new, rho_new, obj_new)
                    break
                trial *= 0.5
            if accepted is None:
                message = "line search failed"
                break
            v_new, rho_new, obj_new = accepted
            tau = trial
        else:
            v_new = Trajectory(v.grid, v.times, _with_first_frame(v.values - cfg.tau * d))
            rho_new, obj_new = evaluate(v_new, it, rho)
            trial = cfg.tau
        steps.append(trial)
        rel_change = abs(obj - obj_new) / max(abs(obj), 1e-300)
        prev = (v.values, g.values)
        v, rho, obj = v_new, rho_new, obj_new
        logger.debug("descent it=%d obj=%.10g |g|=%.3e tau=%.3e", it, obj, gn, trial)

    if phi is None or len(objs) == 0:
        phi = adjoint_solve(rho, v, spec, cfg)
    return DescentReport(
        objective_history=objs,
        gradient_norm_history=gnorms,
        step_history=steps,
        solution=_solution(rho, v, phi, spec),
        converged=converged,
        iterations=len(objs),
        message=message,
        gradient=g,
    )


@dataclass(frozen=True)
class GradientCheckRow:
    eps: float
    finite_difference: float
    adjoint: float
    relative_error: float


def check_gradient(
    rho0: Field,
    spec: ModelSpec,
    cfg: SolverConfig,
    perturbation: Trajectory,
    steps=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6),
    v: Trajectory | None = None,
) -> list[GradientCheckRow]:
    """Compare central differences of the reduced objective with ``<gradient, dv>``.

    Newton is run to a tight tolerance so the finite differences see the
    discrete objective and not solver noise.
    """
    cfg = cfg.replace(newton_tol=min(cfg.newton_tol, 1e-11), newton_max_iter=max(cfg.newton_max_iter, 100))
    if v is None:
        v, _ = initial_velocity(rho0, spec, cfg)
    rho = forward_solve(v, rho0, spec, cfg)
    phi = adjoint_solve(rho, v, spec, cfg)
    g = gradient_field(rho, phi, v, spec, cfg.dt)
    exact = inner(g, perturbation, rho)

    def objective(vals):
        vel = Trajectory(v.grid, v.times, vals)
        return evaluate_objective(forward_solve(vel, rho0, spec, cfg), vel, spec)

    rows = []
    for eps in steps:
        fd = (objective(v.values + eps * perturbation.values) - objective(v.values - eps * perturbation.values)) / (2 * eps)
        if exact == 0.0 and fd == 0.0:
            err = 0.0
        else:
            err = abs(fd - exact) / max(abs(exact), 1e-300)
        rows.append(GradientCheckRow(float(eps), float(fd), float(exact), float(err)))
    return rows
