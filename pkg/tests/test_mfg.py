import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowd_mfg import Field, ModelSpec, SolverConfig, Trajectory, build_grid
from crowd_mfg.cli.initial import SINGLE_BUMP, piecewise_constant
from crowd_mfg.mfg import (
    NewtonError,
    StepOperator,
    adjoint_solve,
    check_gradient,
    evaluate_objective,
    forward_solve,
    forward_solve_full,
    gradient_field,
    initial_velocity,
    inner,
    run_descent,
    time_weights,
)
from crowd_mfg.mfg.scheme import newton_step_solve

HUGHES = ModelSpec(mobility="hughes", sigma=0.1, beta=1.0)


def balance_errors(rho: Trajectory, spec: ModelSpec, dt: float) -> np.ndarray:
    """Relative defect of ``M^k - M^{k-1} = -dt * beta * (rho_first + rho_last)``."""
    m = rho.masses()
    out = spec.beta * (rho.values[1:, 0] + rho.values[1:, -1])
    return np.abs(m[1:] - m[:-1] + dt * out) / np.maximum(m[:-1], 1e-300)


def random_problem(seed, n=60, spec=HUGHES, vmax=20.0, cfg=SolverConfig(dt=0.1, T=1.0)):
    rng = np.random.default_rng(seed)
    g = build_grid(-1, 1, n)
    rho0 = Field(g, rng.uniform(0, spec.rho_max if spec.mobility.value == "hughes" else 2.0, n))
    v = Trajectory(g, cfg.times, rng.uniform(-vmax, vmax, (cfg.times.size, n)))
    return rho0, v, cfg


class TestForward:
    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_crowding_bound(self, seed):
        rho0, v, cfg = random_problem(seed)
        rho = forward_solve(v, rho0, HUGHES, cfg)
        assert rho.values.min() >= -1e-8 and rho.values.max() <= 1 + 1e-8

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), beta=st.sampled_from([0.5, 1.0, 10.0]), linear=st.booleans())
    def test_mass_balance(self, seed, beta, linear):
        spec = ModelSpec(mobility="linear" if linear else "hughes", sigma=0.1, beta=beta)
        rho0, v, cfg = random_problem(seed, spec=spec)
        rho = forward_solve(v, rho0, spec, cfg)
        assert balance_errors(rho, spec, cfg.dt).max() < 1e-10

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_conservative_without_outflow(self, seed):
        spec = HUGHES.replace(beta=0.0)
        rho0, v, cfg = random_problem(seed, spec=spec)
        m = forward_solve(v, rho0, spec, cfg).masses()
        assert np.max(np.abs(m - m[0])) <= 1e-12 * m[0]

    def test_zero_velocity_constant_state_is_steady_with_walls(self):
        g = build_grid(-1, 1, 20, ("wall", "wall"))
        cfg = SolverConfig(dt=0.1, T=1.0)
        rho = forward_solve(Trajectory.constant(g, cfg.times), Field(g, np.full(20, 0.4)), HUGHES, cfg)
        np.testing.assert_allclose(rho.values, 0.4, atol=1e-14)

    def test_residual_and_iterations_reported(self):
        rho0, v, cfg = random_problem(1)
        res = forward_solve_full(v, rho0, HUGHES, cfg)
        assert np.all(res.residuals <= cfg.newton_tol)
        assert res.newton_iterations.shape == (len(cfg.times) - 1,)

    def test_newton_failure_is_reported(self):
        rho0, v, cfg = random_problem(2, vmax=200.0)
        op = StepOperator(rho0.grid, HUGHES, v.values[1], cfg.dt)
        with pytest.raises(NewtonError) as info:
            newton_step_solve(op, rho0.values, 1e-14, 1, step_index=1)
        assert info.value.step == 1

    def test_misaligned_velocity_rejected(self):
        rho0, v, _ = random_problem(0)
        with pytest.raises(ValueError):
            forward_solve(v, rho0, HUGHES, SolverConfig(dt=0.05, T=1.0))

    def test_heat_equation_relaxes_to_mean(self):
        g = build_grid(-1, 1, 60)
        cfg = SolverConfig(dt=0.1, T=3.0)
        spec = HUGHES.replace(beta=0.0)
        rho0 = Field(g, piecewise_constant(g, SINGLE_BUMP))
        rho = forward_solve(Trajectory.constant(g, cfg.times), rho0, spec, cfg).values
        dist = np.sqrt(g.h * np.sum((rho - rho0.mass() / 2.0) ** 2, axis=1))
        assert np.all(np.diff(dist) < 0)

    def test_mirror_symmetry(self):
        g = build_grid(-1, 1, 80)
        x = g.centers
        cfg = SolverConfig(dt=0.1, T=1.0)
        rho0 = Field(g, 0.5 * np.exp(-10 * x**2))
        v = Trajectory(g, cfg.times, np.tile(3 * x, (cfg.times.size, 1)))
        rho = forward_solve(v, rho0, HUGHES, cfg).values
        np.testing.assert_allclose(rho, rho[:, ::-1], atol=1e-12)


class TestObjectiveAndAdjoint:
    def test_time_weights_right_endpoint(self):
        np.testing.assert_allclose(time_weights(np.array([0.0, 0.1, 0.2])), [0.0, 0.1, 0.1])

    @pytest.mark.parametrize("alpha", [1.0, 3.0])
    def test_objective_of_resting_crowd(self, alpha):
        # no motion and no outflow: only the exit-time term, (alpha/2) T * mass
        g = build_grid(-1, 1, 40)
        spec = ModelSpec(mobility="hughes", sigma=0.1, beta=0.0, alpha=alpha)
        cfg = SolverConfig(dt=0.1, T=2.0)
        rho0 = Field(g, piecewise_constant(g, SINGLE_BUMP))
        v = Trajectory.constant(g, cfg.times)
        rho = forward_solve(v, rho0, spec, cfg)
        assert evaluate_objective(rho, v, spec) == pytest.approx(alpha / 2 * cfg.T * rho0.mass(), rel=1e-12)

    def test_momentum_form_agrees_and_flags_infeasible(self):
        rho0, v, cfg = random_problem(4)
        rho = forward_solve(v, rho0, HUGHES, cfg)
        from crowd_mfg import eval_mobility

        j = Trajectory(rho.grid, rho.times, eval_mobility(HUGHES, "G", rho.values) * v.values)
        a = evaluate_objective(rho, v, HUGHES)
        b = evaluate_objective(rho, v, HUGHES, flux=j)
        assert np.all(eval_mobility(HUGHES, "H", rho.values[1:]) > 0)
        assert b == pytest.approx(a, rel=1e-10)
        bad = Trajectory(rho.grid, rho.times, np.ones_like(rho.values))
        full = Trajectory(rho.grid, rho.times, np.ones_like(rho.values))
        assert evaluate_objective(full, v, HUGHES, flux=bad) == np.inf

    @pytest.mark.parametrize("alpha", [1.0, 2.5])
    def test_adjoint_of_empty_domain(self, alpha):
        # rho = 0, beta = 0: phi(t) = -(alpha/2)(T - t)
        g = build_grid(-1, 1, 30)
        spec = ModelSpec(mobility="hughes", sigma=0.1, beta=0.0, alpha=alpha)
        cfg = SolverConfig(dt=0.1, T=2.0)
        rho = Trajectory.constant(g, cfg.times)
        phi = adjoint_solve(rho, Trajectory.constant(g, cfg.times), spec, cfg)
        expected = -(alpha / 2) * (cfg.T - cfg.times)
        np.testing.assert_allclose(phi.values, np.tile(expected[:, None], (1, 30)), atol=1e-12)

    def test_terminal_adjoint_is_zero(self):
        rho0, v, cfg = random_problem(6)
        rho = forward_solve(v, rho0, HUGHES, cfg)
        assert np.all(adjoint_solve(rho, v, HUGHES, cfg).values[-1] == 0.0)

    def test_empty_room(self):
        g = build_grid(-1, 1, 30)
        cfg = SolverConfig(dt=0.1, T=1.0)
        spec = ModelSpec(mobility="linear", sigma=0.1, beta=1.0)
        rho = Trajectory.constant(g, cfg.times)
        v = Trajectory(g, cfg.times, np.random.default_rng(0).normal(size=(cfg.times.size, 30)))
        assert evaluate_objective(rho, v, spec) == 0.0
        phi = adjoint_solve(rho, v, spec, cfg)
        assert np.all(gradient_field(rho, phi, v, spec).values == 0.0)

    def test_gradient_vanishes_for_potential_velocity(self):
        # uniform density and a linear potential: v = (G/F) grad phi in the interior
        g = build_grid(-1, 1, 30)
        cfg = SolverConfig(dt=0.1, T=1.0)
        rho = Trajectory.constant(g, cfg.times, 0.3)
        phi = Trajectory(g, cfg.times, np.tile(2.0 * g.centers, (cfg.times.size, 1)))
        v = Trajectory.constant(g, cfg.times, 2.0)
        grad = gradient_field(rho, phi, v, HUGHES).values
        np.testing.assert_allclose(grad[1:, 1:-1], 0.0, atol=1e-13)

    def test_gradient_matches_finite_differences(self):
        g = build_grid(-1, 1, 50)
        spec = ModelSpec(mobility="linear", energy="linear", alpha=3.0, sigma=0.1, beta=1.0)
        cfg = SolverConfig(dt=0.1, T=1.0)
        rho0 = Field(g, piecewise_constant(g, SINGLE_BUMP))
        rng = np.random.default_rng(0)
        pert = Trajectory(g, cfg.times, rng.standard_normal((cfg.times.size, 50)))
        rows = check_gradient(rho0, spec, cfg, pert, steps=(1e-2, 1e-3, 1e-4))
        assert rows[-1].relative_error < 1e-6

    def test_gradient_is_derivative_along_direction(self):
        # independent check with a one-sided quotient and a different direction
        rho0, v, cfg = random_problem(5, vmax=2.0)
        rho = forward_solve(v, rho0, HUGHES, cfg.replace(newton_tol=1e-12))
        phi = adjoint_solve(rho, v, HUGHES, cfg)
        gvec = gradient_field(rho, phi, v, HUGHES)
        d = Trajectory(v.grid, v.times, np.sin(np.arange(v.values.size)).reshape(v.values.shape))
        eps = 1e-6
        tight = cfg.replace(newton_tol=1e-12)
        vp = Trajectory(v.grid, v.times, v.values + eps * d.values)
        fd = (evaluate_objective(forward_solve(vp, rho0, HUGHES, tight), vp, HUGHES) - evaluate_objective(rho, v, HUGHES)) / eps
        assert fd == pytest.approx(inner(gvec, d, rho), rel=1e-4)

    def test_initial_velocity_points_to_exits(self):
        g = build_grid(-1, 1, 40)
        rho0 = Field(g, np.full(40, 0.3))
        v, phi = initial_velocity(rho0, HUGHES, SolverConfig())
        x = g.centers
        assert np.all(v.values[:, x < -0.05] < 0) and np.all(v.values[:, x > 0.05] > 0)


@pytest.fixture(scope="module")
def bump_report():
    g = build_grid(-1, 1, 80)
    rho0 = Field(g, piecewise_constant(g, SINGLE_BUMP))
    return run_descent(rho0, HUGHES, SolverConfig(dt=0.1, T=3.0, grad_tol=1e-4))


class TestDescent:
    def test_converges(self, bump_report):
        assert bump_report.converged, bump_report.message

    def test_objective_non_increasing(self, bump_report):
        assert np.all(np.diff(bump_report.objective_history) <= 0)

    def test_improves_on_start(self, bump_report):
        assert bump_report.objective < bump_report.objective_history[0]

    def test_final_gradient_small(self, bump_report):
        sol = bump_report.solution
        from crowd_mfg.mfg import norm

        assert bump_report.gradient_norm_history[-1] <= 1e-4 * (1 + norm(sol.v, sol.rho))

    @pytest.mark.parametrize("metric", ["l2", "mobility"])
    def test_both_metrics_descend(self, metric):
        g = build_grid(-1, 1, 40)
        rho0 = Field(g, np.full(40, 1 / 3))
        rep = run_descent(rho0, HUGHES, SolverConfig(dt=0.1, T=2.0, descent_max_iter=30, metric=metric))
        assert np.all(np.diff(rep.objective_history) <= 0)
        assert rep.objective < rep.objective_history[0]

    def test_symmetric_datum_gives_symmetric_control(self):
        g = build_grid(-1, 1, 60)
        rho0 = Field(g, np.full(60, 1 / 3))
        rep = run_descent(rho0, HUGHES, SolverConfig(dt=0.1, T=2.0, descent_max_iter=20))
        np.testing.assert_allclose(rep.rho.values, rep.rho.values[:, ::-1], atol=1e-8)
        np.testing.assert_allclose(rep.v.values, -rep.v.values[:, ::-1], atol=1e-6)

    def test_fixed_step_mode(self):
        g = build_grid(-1, 1, 40)
        rho0 = Field(g, np.full(40, 1 / 3))
        rep = run_descent(rho0, HUGHES, SolverConfig(dt=0.1, T=1.0, armijo=False, tau=0.1, descent_max_iter=5))
        assert rep.iterations == 5 and rep.step_history == [0.1] * 5
