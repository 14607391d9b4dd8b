"""KKT residual mapping ``G(x) = x - prox_g(x - grad f(x))``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import CompositeProblem, block_index_set


@dataclass
class ResidualReport:
    g_full: np.ndarray
    norm: float
    per_coordinate_abs: np.ndarray


def residual(problem: CompositeProblem, x, grad) -> ResidualReport:
    """Full residual at ``x`` given ``grad = grad f(x)``."""
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if x.shape != (problem.n,) or grad.shape != (problem.n,):
        raise ValueError("x and grad must both have length n")
    G = x - problem.regularizer.prox(x - grad, 1.0)
    return ResidualReport(G, float(np.linalg.norm(G)), np.abs(G))


def residual_restricted(problem: CompositeProblem, x, grad, S) -> np.ndarray:
    """Residual of the sub-problem on block ``S`` evaluated at ``y = x[S]``.

    Equals ``residual(problem, x, grad).g_full[S]`` because ``g`` is separable;
    ``S`` must therefore be a union of whole regularizer pieces.
    """
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if x.shape != (problem.n,) or grad.shape != (problem.n,):
        raise ValueError("x and grad must both have length n")
    S = block_index_set(S, problem.n)
    reg = problem.regularizer
    if not reg.respects_pieces(S):
        raise ValueError("index set splits a regularizer group")
    y = x[S]
    return y - reg.restrict(S).prox(y - grad[S], 1.0)
