"""Conditional gradient methods for norm-regularized convex problems over cones."""
from .errors import (ConsistencyError, ConvergenceWarning, InvalidConfigError,
                     InvalidInputError, ModelError)
from .objectives import AffineResidualMap, SmoothLoss, SmoothObjective, compose_objective
from .oracles import L1Oracle, NuclearOracle, PSDTraceOracle, TVOracle, ball_lmo
from .cndg import CndGConfig, run_cndg
from .parametric import ParametricConfig, solve_parametric
from .composite import CompositeConfig, CompositeProblem, PenaltyTracker, run_composite

__version__ = "0.1.0"

__all__ = [
    "AffineResidualMap", "CndGConfig", "CompositeConfig", "CompositeProblem",
    "ConsistencyError", "ConvergenceWarning", "InvalidConfigError", "InvalidInputError",
    "L1Oracle", "ModelError", "NuclearOracle", "PSDTraceOracle", "ParametricConfig",
    "PenaltyTracker", "SmoothLoss", "SmoothObjective", "TVOracle", "ball_lmo",
    "compose_objective", "run_cndg", "run_composite", "solve_parametric",
]
