"""Experiment drivers: run solvers from a config and emit CSV, figures and a manifest."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..core import Energy, Solution, SolverConfig, Trajectory
from ..hughes import CFLError, run_hughes
from ..mfg import DescentError, DescentReport, NewtonError, forward_solve, run_descent
from ..oracle import ABSORB, binomial_l1_bound, l1_distance, simulate_particles
from .config import ExperimentConfig
from .output import write_frame_csv, write_history_csv, write_json, write_probe_csv, write_table_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2
EXIT_SOLVER = 3

# rate standing in for an absorbing exit in the continuum comparison
ABSORB_BETA = 1e6


class SolverFailure(RuntimeError):
    """A solver error with the fields of the machine-readable failure record."""

    def __init__(self, module: str, message: str, iteration=None, residual=None, step=None):
        self.record = {"module": module, "message": message, "iteration": iteration, "residual": residual, "time_step": step}
        super().__init__(message)


@dataclass
class RunResult:
    status: int
    output_dir: Path
    files: list[Path] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)


class _Emitter:
    """Collects output files of one run below ``root``."""

    def __init__(self, root: Path, figures: str):
        self.root = root
        self.figures = figures
        self.files: list[Path] = []
        root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def figure(self, stem: str, draw, *args, **kwargs) -> None:
        if self.figures == "none":
            return
        from . import plots

        getattr(plots, draw)(*args, path=self.path(f"{stem}.{self.figures}"), **kwargs)


def _hughes_solver(cfg: ExperimentConfig) -> SolverConfig:
    h = cfg["hughes"]
    s = cfg.solver()
    out = h["output_dt"] if h["output_dt"] is not None else 0.01
    out = max(out, h["dt"])
    return s.replace(dt=h["dt"], output_dt=out)


def solve_hughes(cfg: ExperimentConfig) -> Solution:
    grid = cfg.grid(cfg["hughes"]["n_cells"])
    try:
        return run_hughes(cfg.initial_density(grid), cfg.model(), _hughes_solver(cfg), cfg["hughes"]["f_floor"])
    except CFLError as exc:
        raise SolverFailure("hughes", str(exc), step=exc.step) from exc


def solve_mfg(cfg: ExperimentConfig, spec=None) -> DescentReport:
    spec = cfg.model() if spec is None else spec
    try:
        return run_descent(cfg.initial_density(), spec, cfg.solver())
    except DescentError as exc:
        cause = exc.cause
        res = getattr(cause, "residual", None)
        step = getattr(cause, "step", None)
        raise SolverFailure("mfg", str(exc), iteration=exc.iteration, residual=res, step=step) from exc
    except NewtonError as exc:
        raise SolverFailure("mfg", str(exc), iteration=0, residual=exc.residual, step=exc.step) from exc


def _not_converged(report: DescentReport) -> dict:
    return {
        "module": "mfg",
        "message": f"descent stopped: {report.message}",
        "iteration": report.iterations,
        "residual": report.gradient_norm_history[-1] if report.gradient_norm_history else None,
        "time_step": None,
    }


def _emit_solution(em: _Emitter, sol: Solution, probes, prefix: str = "") -> None:
    write_frame_csv(sol, em.path(f"{prefix}frames.csv"))
    if probes:
        write_probe_csv(sol, probes, em.path(f"{prefix}probes.csv"))


def _emit_report(em: _Emitter, report: DescentReport, probes, frames) -> dict:
    _emit_solution(em, report.solution, probes)
    write_history_csv(report, em.path("history.csv"))
    em.figure("profiles", "profile_figure", report.solution, frames)
    em.figure("history", "history_figure", report.objective_history, report.gradient_norm_history)
    return {
        "converged": report.converged,
        "iterations": report.iterations,
        "objective": report.objective,
        "gradient_norm": report.gradient_norm_history[-1],
        "message": report.message,
    }


def _run_hughes(cfg: ExperimentConfig, em: _Emitter, result: RunResult) -> None:
    sol = solve_hughes(cfg)
    _emit_solution(em, sol, cfg.probes)
    em.figure("profiles", "profile_figure", sol, cfg["sweep"]["frames"])
    result.summary["final_mass"] = float(sol.rho.masses()[-1])


def _run_mfg(cfg: ExperimentConfig, em: _Emitter, result: RunResult) -> None:
    report = solve_mfg(cfg)
    result.summary.update(_emit_report(em, report, cfg.probes, cfg["sweep"]["frames"]))
    if not report.converged:
        result.failures.append(_not_converged(report))


def _run_compare(cfg: ExperimentConfig, em: _Emitter, result: RunResult) -> None:
    hughes = solve_hughes(cfg)
    report = solve_mfg(cfg)
    sub_h = _Emitter(em.root / "hughes", em.figures)
    sub_m = _Emitter(em.root / "mfg", em.figures)
    _emit_solution(sub_h, hughes, cfg.probes)
    result.summary["mfg"] = _emit_report(sub_m, report, cfg.probes, cfg["sweep"]["frames"])
    em.files += sub_h.files + sub_m.files
    em.figure("comparison", "comparison_figure", {"Hughes": hughes, "mean field": report.solution}, cfg["sweep"]["frames"])
    if not report.converged:
        result.failures.append(_not_converged(report))


def _run_oracle(cfg: ExperimentConfig, em: _Emitter, result: RunResult) -> None:
    o = cfg["oracle"]
    grid = cfg.grid()
    rho0 = cfg.initial_density(grid)
    beta = ABSORB_BETA if o["boundary"] == ABSORB else 0.0
    spec = cfg.model().replace(beta=beta)
    scfg = cfg.solver()
    v = Trajectory.constant(grid, scfg.times, 0.0)
    cont = forward_solve(v, rho0, spec, scfg)
    emp, ens = simulate_particles(v, rho0, spec, o["n_particles"], o["dt_sde"], seed=cfg.seed, boundary=o["boundary"])
    mass = rho0.mass()
    rows = []
    for k, t in enumerate(cont.times):
        d = l1_distance(emp.values[k], cont.values[k], grid.h)
        b = binomial_l1_bound(cont.values[k], grid, o["n_particles"], mass)
        rows.append((float(t), d, b, d / b if b > 0 else float("nan"), float(emp.values[k].sum() * grid.h), float(cont.values[k].sum() * grid.h)))
    write_table_csv(("t", "l1_distance", "binomial_bound", "ratio", "mass_particles", "mass_continuum"), rows, em.path("discrepancy.csv"))
    write_frame_csv(emp, em.path("particles_frames.csv"))
    write_frame_csv(cont, em.path("continuum_frames.csv"))
    em.figure("oracle", "comparison_figure", {"particles": Solution(emp), "continuum": Solution(cont)}, cfg["sweep"]["frames"])
    result.summary.update({"final_l1": rows[-1][1], "final_bound": rows[-1][2], "alive_fraction": ens.alive_fraction})


def _sweep_models(cfg: ExperimentConfig) -> list[str]:
    models = [m.strip() for m in cfg["sweep"]["models"].replace(";", ",").split(",") if m.strip()]
    bad = [m for m in models if m not in ("mfg", "hughes")]
    if bad or not models:
        raise SolverFailure("cli", f"sweep.models must list mfg and/or hughes, got {cfg['sweep']['models']!r}")
    return models


def _run_beta_sweep(cfg: ExperimentConfig, em: _Emitter, result: RunResult, threads: int) -> None:
    models = _sweep_models(cfg)
    frames = cfg["sweep"]["frames"]
    jobs = [(m, b) for m in models for b in cfg["sweep"]["beta"]]

    def member(job):
        model, beta = job
        sub = cfg.replace("model", beta=beta)
        if model == "hughes":
            return job, solve_hughes(sub), None
        report = solve_mfg(sub)
        return job, report.solution, report

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outcomes = list(pool.map(member, jobs))

    rows = []
    for model in models:
        runs = {}
        for (m, beta), sol, report in outcomes:
            if m != model:
                continue
            sub = _Emitter(em.root / f"{model}_beta_{beta:g}", em.figures)
            if report is not None:
                result.summary[f"{model}_beta_{beta:g}"] = _emit_report(sub, report, cfg.probes, frames)
                if not report.converged:
                    result.failures.append(_not_converged(report))
            else:
                _emit_solution(sub, sol, cfg.probes)
            em.files += sub.files
            runs[f"beta = {beta:g}"] = sol
            for t in frames:
                k = sol.rho.index_of(t)
                phi = sol.phi.values[k] if sol.phi is not None else [None] * sol.grid.n_cells
                for x, r, p in zip(sol.grid.centers, sol.rho.values[k], phi):
                    rows.append((model, float(beta), float(sol.times[k]), float(x), float(r), "" if p is None else float(p)))
        em.figure(f"{model}_frames", "comparison_figure", runs, frames)
    write_table_csv(("model", "beta", "t", "x", "rho", "phi"), rows, em.path("comparison_frames.csv"))


def _run_energy_compare(cfg: ExperimentConfig, em: _Emitter, result: RunResult, threads: int) -> None:
    base = cfg.model()
    specs = {"linear": base.replace(energy=Energy.LINEAR), "exponential": base.replace(energy=Energy.EXPONENTIAL)}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        reports = dict(zip(specs, pool.map(lambda s: solve_mfg(cfg, s), specs.values())))
    frames = cfg["sweep"]["frames"]
    for name, report in reports.items():
        sub = _Emitter(em.root / name, em.figures)
        result.summary[name] = _emit_report(sub, report, cfg.probes, frames)
        em.files += sub.files
        if not report.converged:
            result.failures.append(_not_converged(report))
    lin, exp = reports["linear"].rho, reports["exponential"].rho
    rows = zip(lin.times, lin.masses(), exp.masses(), lin.values.max(axis=1), exp.values.max(axis=1))
    write_table_csv(
        ("t", "mass_linear", "mass_exponential", "max_linear", "max_exponential"),
        ([float(c) for c in r] for r in rows),
        em.path("mass_comparison.csv"),
    )
    em.figure("energy_frames", "comparison_figure", {n: r.solution for n, r in reports.items()}, frames)
    em.figure(
        "remaining_mass",
        "series_figure",
        lin.times,
        {"E linear": lin.masses(), "E exponential": exp.masses()},
        "remaining mass",
    )


def run_experiment(
    cfg: ExperimentConfig, output_dir: str | Path | None = None, seed: int | None = None, threads: int = 1
) -> RunResult:
    """Run the configured experiment and write its files plus ``manifest.json``.

    The status is 0 on success, 2 when a descent did not converge and 3 on a
    solver error; failures also produce ``failure.json``.
    """
    if seed is not None:
        cfg = cfg.replace("run", seed=int(seed))
    root = Path(output_dir) if output_dir is not None else cfg.resolve(str(cfg.output_dir))
    em = _Emitter(root, cfg["run"]["figures"])
    result = RunResult(EXIT_OK, root)
    start = time.perf_counter()
    try:
        if cfg.experiment == "hughes":
            _run_hughes(cfg, em, result)
        elif cfg.experiment == "mfg":
            _run_mfg(cfg, em, result)
        elif cfg.experiment == "compare":
            _run_compare(cfg, em, result)
        elif cfg.experiment == "oracle":
            _run_oracle(cfg, em, result)
        elif cfg.experiment == "beta_sweep":
            _run_beta_sweep(cfg, em, result, threads)
        elif cfg.experiment == "energy_compare":
            _run_energy_compare(cfg, em, result, threads)
        else:  # pragma: no cover - the parser rejects other names
            raise SolverFailure("cli", f"unknown experiment {cfg.experiment!r}")
        if result.failures:
            result.status = EXIT_NOT_CONVERGED
    except SolverFailure as exc:
        logger.error("%s", exc)
        result.failures.append(exc.record)
        result.status = EXIT_SOLVER
    wall = time.perf_counter() - start

    if result.failures:
        write_json({"status": result.status, "failures": result.failures}, em.path("failure.json"))
    manifest = root / "manifest.json"
    result.files = list(em.files) + [manifest]
    write_json(
        {
            "tool": "crowd-mfg",
            "version": __version__,
            "experiment": cfg.experiment,
            "status": result.status,
            "seed": cfg.seed,
            "config_dir": str(cfg.base_dir),
            "parameters": cfg.as_dict(),
            "sources": dict(cfg.sources),
            "files": sorted(str(p.relative_to(root)) for p in em.files),
            "wall_time_s": wall,
            "summary": result.summary,
        },
        manifest,
    )
    return result


def gradient_check_rows(cfg: ExperimentConfig, seed: int = 0):
    """Adjoint gradient against central differences along a random smooth direction."""
    from ..mfg import check_gradient

    grid = cfg.grid()
    scfg = cfg.solver()
    rng = np.random.default_rng(seed)
    times = scfg.times
    x = grid.centers
    coef = rng.standard_normal((3, 3))
    pert = sum(coef[a, b] * np.cos((a + 1) * np.pi * times / times[-1])[:, None] * np.sin((b + 1) * np.pi * x)[None, :] for a in range(3) for b in range(3))
    return check_gradient(cfg.initial_density(grid), cfg.model(), scfg, Trajectory(grid, times, pert))
