"""Lattice solvers for reflected and second-order reflected BSDEs under volatility uncertainty."""

from .errors import (ContractionError, DomainError, InvalidInstanceError, NumericalFailure,
                     RbsdeLabError)
from .lattice import Lattice, build_lattice, cond_expect, gradient
from .model import (GeneratorSpec, Instance, ObstacleSpec, TerminalSpec, TimeGrid,
                    UncertaintyInterval, load_instance, make_generator, make_obstacle,
                    make_terminal, validate_instance)
from .rbsde import RbsdeSolution, Scenario, skorohod_residual, solve_penalized, solve_rbsde
from .soref import SecondOrderSolution, extract_K, solve_2rbsde_dpp

__version__ = "0.1.0"

__all__ = [
    "ContractionError", "DomainError", "InvalidInstanceError", "NumericalFailure",
    "RbsdeLabError", "Lattice", "build_lattice", "cond_expect", "gradient", "GeneratorSpec",
    "Instance", "ObstacleSpec", "TerminalSpec", "TimeGrid", "UncertaintyInterval",
    "load_instance", "make_generator", "make_obstacle", "make_terminal", "validate_instance",
    "RbsdeSolution", "Scenario", "skorohod_residual", "solve_penalized", "solve_rbsde",
    "SecondOrderSolution", "extract_K", "solve_2rbsde_dpp",
]
