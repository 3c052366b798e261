"""Multiscale primal-dual active set solver for high-contrast Signorini contact problems."""

__version__ = "0.1.0"

from .errors import CemContactError, ConfigError, NonTermination, OracleNonConvergence, SolverFailure
from .grid import build_hierarchy, decompose_boundary
from .medium import compute_weight, generate_medium
from .problem import build_problem
from .contactsolve import CemVariant, FineVariant, run

__all__ = [
    "CemContactError", "ConfigError", "NonTermination", "OracleNonConvergence", "SolverFailure",
    "build_hierarchy", "decompose_boundary", "compute_weight", "generate_medium", "build_problem",
    "CemVariant", "FineVariant", "run",
]
