"""Optimal boundary heat-flux control of the unsteady 2D Boussinesq equations.

Finite elements of Bercovier-Pironneau type (P1 velocity on a midpoint
refinement, P1 pressure on the coarse mesh), a first-order splitting in time
with an incremental L2 projection, a fully discrete adjoint for the gradient
and an L-BFGS optimizer whose step length comes from the linearized model.
"""
from .adjoint import AdjointTrajectory, compute_gradient, solve_adjoint
from .fem import FemOperators, FeSpace, SpaceKind
from .linearized import DegenerateDirection, model_quadratic, solve_linearized, step_size
from .mesh import Mesh, MeshError, MeshPair, SegmentTag, build_reactor, build_unit_square
from .optimizer import LbfgsMemory, NonfiniteObjective, lbfgs_solve, two_loop_direction
from .problem import (ControlSpace, Objective, ProblemSetup, ProjectionVariant, ThetaBC,
                      example1, example2)
from .state import (SolverBreakdown, StateTrajectory, evaluate_objective, solve_state,
                    tracking_error_series, vorticity_series)

__version__ = "0.1.0"

__all__ = [
    "AdjointTrajectory", "compute_gradient", "solve_adjoint",
    "FemOperators", "FeSpace", "SpaceKind",
    "DegenerateDirection", "model_quadratic", "solve_linearized", "step_size",
    "Mesh", "MeshError", "MeshPair", "SegmentTag", "build_reactor", "build_unit_square",
    "LbfgsMemory", "NonfiniteObjective", "lbfgs_solve", "two_loop_direction",
    "ControlSpace", "Objective", "ProblemSetup", "ProjectionVariant", "ThetaBC",
    "example1", "example2",
    "SolverBreakdown", "StateTrajectory", "evaluate_objective", "solve_state",
    "tracking_error_series", "vorticity_series",
]
