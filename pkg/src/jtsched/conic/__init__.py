from .backends import BACKENDS, Tolerances, get_backend, solve
from .embed import ComplexVar, realify, realify_matrix
from .problem import (INFEASIBLE, NUMERICAL_FAILURE, OPTIMAL, UNBOUNDED, Affine, ConicBuilder,
                      ConicProblem, ConicSolution)

__all__ = [
    "Affine", "BACKENDS", "ComplexVar", "ConicBuilder", "ConicProblem", "ConicSolution",
    "INFEASIBLE", "NUMERICAL_FAILURE", "OPTIMAL", "Tolerances", "UNBOUNDED", "get_backend",
    "realify", "realify_matrix", "solve",
]
