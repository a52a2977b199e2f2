"""Pathwise solvers for smooth losses with grouped weighted l^q penalties, 0 < q <= 1."""

from .losses import GroupedVector, QuadraticLSALoss, RegressionLoss, SmoothLossModel
from .path import PathResult, lambda_max, make_grid, path_diagnostics, solve_path
from .penalty import PenaltySpec
from .prox_core import (
    NoRoot,
    ThresholdParams,
    half_threshold_closed,
    scalar_threshold,
    solve_root,
    threshold_constants,
    vector_threshold,
)
from .solvers import SolverConfig, SolverResult, apg_solve, cd_solve, objective_value, palm_solve, solve

__version__ = "0.1.0"

__all__ = [
    "GroupedVector",
    "SmoothLossModel",
    "QuadraticLSALoss",
    "RegressionLoss",
    "PenaltySpec",
    "PathResult",
    "SolverConfig",
    "SolverResult",
    "ThresholdParams",
    "NoRoot",
    "threshold_constants",
    "solve_root",
    "scalar_threshold",
    "half_threshold_closed",
    "vector_threshold",
    "objective_value",
    "apg_solve",
    "palm_solve",
    "cd_solve",
    "solve",
    "lambda_max",
    "make_grid",
    "solve_path",
    "path_diagnostics",
]
