"""Optimal switching under marked-point-process filtrations, solved on a recombining chain."""

from .bsde import BsdeSolution, BsdeSpec, solve_penalized, solve_reflected, solve_standard
from .lattice import ChainGrid, StabilityViolation, build_chain, make_grid
from .mpp import CompensatorSpec, KernelField, MarkedPath
from .oracle import ValueTable, dp_value, enumerate_strategies, tree_value
from .problem import ModeSpec, Strategy, SwitchingProblem, estimate_J, validate_problem
from .problemfile import load_problem, read_problem
from .switching import extract_strategy, picard_solve, solve_mode_floor, solve_upper_bound, verify_representation

__version__ = "0.1.0"
