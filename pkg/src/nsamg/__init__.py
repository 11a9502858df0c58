"""Nonsymmetric algebraic multigrid with convergence-theory diagnostics."""

from .estimators import NSAMGSolver, TransferAnalyzer, analyze_pair
from .exceptions import ConfigError, NSAMGError, NumericalError
from .linalg import SvdFactorization, polar_q, svd
from .problems import ProblemSpec, ScaledSystem, generate, prepare, read_matrix_market, write_matrix_market
from .solver import build_hierarchy, mu_cycle_solve, two_grid_solve

__version__ = "0.1.0"

__all__ = [
    "NSAMGSolver", "TransferAnalyzer", "analyze_pair",
    "ConfigError", "NSAMGError", "NumericalError",
    "SvdFactorization", "polar_q", "svd",
    "ProblemSpec", "ScaledSystem", "generate", "prepare", "read_matrix_market", "write_matrix_market",
    "build_hierarchy", "mu_cycle_solve", "two_grid_solve",
]
