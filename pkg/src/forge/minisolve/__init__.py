"""Small exact MIP oracle: simplex LP relaxation, branch and bound, enumeration."""

from .bnb import (EXHAUSTIVE_MAX_VARS, STATUS_FEASIBLE, STATUS_INFEASIBLE, STATUS_LIMIT, STATUS_OPTIMAL,
                  MipSolution, SolutionPool, solve_exhaustive, solve_mip)
from .labels import GapLabel, integrality_gap_label, primal_gap, read_solution, write_solution
from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, LpSolution, solve_lp

__all__ = [
    "EXHAUSTIVE_MAX_VARS", "STATUS_FEASIBLE", "STATUS_INFEASIBLE", "STATUS_LIMIT", "STATUS_OPTIMAL",
    "MipSolution", "SolutionPool", "solve_exhaustive", "solve_mip", "GapLabel", "integrality_gap_label",
    "primal_gap", "read_solution", "write_solution", "INFEASIBLE", "OPTIMAL", "UNBOUNDED", "LpSolution",
    "solve_lp",
]
