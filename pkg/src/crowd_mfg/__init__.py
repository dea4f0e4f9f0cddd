"""Fast-exit crowd dynamics: mean-field optimal control and the Hughes baseline."""

from .core import (
    EXIT,
    INFEASIBLE,
    WALL,
    Energy,
    Field,
    Grid,
    ModelSpec,
    Mobility,
    Solution,
    SolverConfig,
    Trajectory,
    build_grid,
    eval_energy,
    eval_K,
    eval_mobility,
    eval_mobility_derivative,
)

__version__ = "0.1.0"

__all__ = [
    "EXIT",
    "INFEASIBLE",
    "WALL",
    "Energy",
    "Field",
    "Grid",
    "ModelSpec",
    "Mobility",
    "Solution",
    "SolverConfig",
    "Trajectory",
    "build_grid",
    "eval_K",
    "eval_energy",
    "eval_mobility",
    "eval_mobility_derivative",
]
