"""Mean-field optimal control solver: forward, adjoint and steepest descent."""

from .descent import (
    DescentError,
    DescentReport,
    GradientCheckRow,
    check_gradient,
    evaluate_objective,
    gradient_field,
    initial_velocity,
    inner,
    norm,
    run_descent,
    time_weights,
)
from .scheme import AdjointError, NewtonError, StepOperator, adjoint_solve, forward_solve, forward_solve_full

__all__ = [
    "AdjointError",
    "DescentError",
    "DescentReport",
    "GradientCheckRow",
    "NewtonError",
    "StepOperator",
    "adjoint_solve",
    "check_gradient",
    "evaluate_objective",
    "forward_solve",
    "forward_solve_full",
    "gradient_field",
    "initial_velocity",
    "inner",
    "norm",
    "run_descent",
    "time_weights",
]
