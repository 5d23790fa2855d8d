"""Optimization substrate: sparse LP container, solvers, MPS interchange."""

from .mps import export_mps, read_mps
from .problem import LpProblem, LpSolution, LpStatus
from .simplex import simplex_solve
from .solve import branch_and_bound, solve_lp, solve_mip

__all__ = [
    "LpProblem",
    "LpSolution",
    "LpStatus",
    "branch_and_bound",
    "export_mps",
    "read_mps",
    "simplex_solve",
    "solve_lp",
    "solve_mip",
]
