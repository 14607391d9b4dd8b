"""Stochastic block-coordinate proximal Newton methods for ``min f(x) + g(x)``
with smooth nonconvex ``f`` and separable convex ``g``."""
from .driver import (
    Algorithm,
    SolverConfig,
    SolveTrace,
    Status,
    backtracking_line_search,
    run_alg1,
    run_alg2,
    run_vm,
    solve,
)
from .problem import CompositeProblem, QuadraticOracle, SmoothOracle, composite_value, gradient_check
from .regularizers import L1, GroupL2, Zero
from .residual import residual, residual_restricted
from .sampling import CyclicContiguous, CyclicPermuted, Full, TopK, UniformRandom, make_strategy

__version__ = "0.1.0"
