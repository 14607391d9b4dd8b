"""Composite problem abstraction ``phi(x) = f(x) + g(x)``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .regularizers import SeparableRegularizer

# dense |S| x |S| restrictions are only formed up to this size
DENSE_LIMIT = 512


def block_index_set(indices, n: int) -> np.ndarray:
    """Validate and return a sorted, duplicate-free index array within ``[0, n)``."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("block index set must be nonempty")
    if np.any(np.diff(idx) <= 0):
        raise ValueError("block index set must be strictly increasing")
    if idx[0] < 0 or idx[-1] >= n:
        raise ValueError(f"block indices must lie in [0, {n})")
    return idx


class SmoothOracle:
    """Interface for the smooth part ``f``.

    Subclasses implement :meth:`value`, :meth:`gradient` and
    :meth:`restricted_operator`. ``lipschitz_bound`` is a global bound on the
    gradient Lipschitz constant (``None`` when unknown) and ``zeta`` bounds the
    distance between the exact Hessian and the matrices returned by
    :meth:`restricted_operator` (0 for exact Hessians, ``None`` when unknown).
    """

    n: int
    lipschitz_bound: Optional[float] = None
    zeta: Optional[float] = None

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def restricted_operator(self, x, S) -> LinearOperator:
        """Symmetric ``|S| x |S|`` operator approximating ``hess f(x)[S, S]``."""
        raise NotImplementedError

    def curvature_floor(self, x, S) -> Optional[float]:
        """Lower bound on the smallest eigenvalue of the restricted operator."""
        return None

    def operator_norm_bound(self, x, S) -> Optional[float]:
        """Upper bound on the norm of the restricted operator, if cheap."""
        return None

    def dense_restricted(self, x, S) -> np.ndarray:
        S = np.asarray(S)
        if len(S) > DENSE_LIMIT:
            raise ValueError(f"refusing to densify a {len(S)}-block (limit {DENSE_LIMIT})")
        op = self.restricted_operator(x, S)
        M = op.matmat(np.eye(len(S)))
        return 0.5 * (M + M.T)


class _XCache:
    """Single-entry cache keyed on the exact bytes of ``x``.

    The entry is swapped as one tuple so concurrent readers never see a key
    paired with another point's payload.
    """

    def __init__(self):
        self._entry: tuple[bytes, Any] | None = None

    def get(self, x, compute):
        key = np.ascontiguousarray(x, dtype=float).tobytes()
        entry = self._entry
        if entry is not None and entry[0] == key:
            return entry[1]
        val = compute(x)
        self._entry = (key, val)
        return val


class QuadraticOracle(SmoothOracle):
    """``f(x) = 0.5 (x - a)^T H (x - a)`` with a dense symmetric ``H``.

    Defaults to ``H = I``. Mainly a test and example problem.
    """

    def __init__(self, a, H=None):
        self.a = np.asarray(a, dtype=float)
        self.n = self.a.size
        self.H = np.eye(self.n) if H is None else np.asarray(H, dtype=float)
        if self.H.shape != (self.n, self.n) or not np.allclose(self.H, self.H.T):
            raise ValueError("H must be a symmetric n x n matrix")
        eig = np.linalg.eigvalsh(self.H)
        self._eigmin = float(eig[0])
        self.lipschitz_bound = float(np.max(np.abs(eig)))
        self.zeta = 0.0

    def value(self, x):
        r = np.asarray(x, dtype=float) - self.a
        return 0.5 * float(r @ (self.H @ r))

    def gradient(self, x):
        return self.H @ (np.asarray(x, dtype=float) - self.a)

    def restricted_operator(self, x, S):
        HS = self.H[np.ix_(S, S)]
        return LinearOperator(HS.shape, matvec=lambda v: HS @ v, dtype=float)

    def curvature_floor(self, x, S):
        return self._eigmin

    def operator_norm_bound(self, x, S):
        return self.lipschitz_bound


@dataclass
class CompositeProblem:
    smooth: SmoothOracle
    regularizer: SeparableRegularizer

    def __post_init__(self):
        if self.smooth.n != self.regularizer.n:
            raise ValueError(
                f"dimension mismatch: f has n={self.smooth.n}, g has n={self.regularizer.n}")
        if self.regularizer.bounds[0] != 0 or self.regularizer.bounds[-1] != self.n:
            raise ValueError("regularizer pieces must cover [0, n)")
        if not np.isfinite(self.value(np.zeros(self.n))):
            raise ValueError("phi(0) must be finite")

    @property
    def n(self) -> int:
        return self.smooth.n

    def value(self, x) -> float:
        return composite_value(self, x)


def composite_value(problem: CompositeProblem, x) -> float:
    """``f(x) + g(x)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.n,):
        raise ValueError(f"expected vector of length {problem.n}, got shape {x.shape}")
    return problem.smooth.value(x) + problem.regularizer.value(x)


@dataclass
class IterateState:
    x: np.ndarray
    phi: float
    k: int
    rng: np.random.Generator


def gradient_check(oracle: SmoothOracle, x, h: float = 1e-5) -> float:
    """Largest relative disagreement between ``oracle.gradient`` and central differences.

    Returns ``inf`` when ``f`` is not finite at any probe point.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    g = oracle.gradient(x)
    err = 0.0
    e = np.zeros_like(x)
    for i in range(x.size):
        e[i] = h
        fp, fm = oracle.value(x + e), oracle.value(x - e)
        e[i] = 0.0
        if not (np.isfinite(fp) and np.isfinite(fm)):
            return float("inf")
        fd = (fp - fm) / (2 * h)
        err = max(err, abs(fd - g[i]) / (1.0 + abs(g[i])))
    return err
