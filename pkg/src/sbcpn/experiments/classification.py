"""Robust-loss classification problems: Geman-McClure with a ridge term, and
the biweight loss with a group penalty."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from ..problem import DENSE_LIMIT, CompositeProblem, SmoothOracle, _XCache
from ..regularizers import GroupL2, Zero

CLAMP = 1e-8
GROUP_WIDTH = 5


def gm_loss(t):
    t = np.asarray(t, dtype=float)
    return 2.0 * t * t / (t * t + 4.0)


def gm_loss_d1(t):
    t = np.asarray(t, dtype=float)
    return 16.0 * t / (t * t + 4.0) ** 2


def gm_loss_d2(t):
    t = np.asarray(t, dtype=float)
    return 16.0 * (4.0 - 3.0 * t * t) / (t * t + 4.0) ** 3


def biweight(t):
    t = np.asarray(t, dtype=float)
    return t * t / (t * t + 1.0)


def biweight_d1(t):
    t = np.asarray(t, dtype=float)
    return 2.0 * t / (t * t + 1.0) ** 2


def biweight_d2(t):
    t = np.asarray(t, dtype=float)
    return (2.0 - 6.0 * t * t) / (t * t + 1.0) ** 3


def _col_norms(Z):
    if sp.issparse(Z):
        return np.sqrt(np.asarray(Z.multiply(Z).sum(axis=0)).ravel())
    return np.linalg.norm(Z, axis=0)


def _check_unit_columns(Z, tol=1e-10):
    norms = _col_norms(Z)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError("feature columns must have unit Euclidean norm")


def _fro2(Z):
    return float(Z.multiply(Z).sum()) if sp.issparse(Z) else float((Z * Z).sum())


def _row_major(Z):
    return Z.tocsr() if sp.issparse(Z) else Z


def _rows(Z, S):
    ZS = Z[S]
    return ZS.toarray() if sp.issparse(ZS) and ZS.shape[0] * ZS.shape[1] <= 4_000_000 else ZS


def _weighted_gram_operator(ZS, D, shift=0.0):
    """``ZS diag(D) ZS^T + shift I`` as an operator; formed densely for small blocks,
    where one ``k x k`` product is cheaper than the repeated matrix-vector pairs."""
    k, m = ZS.shape
    if k <= min(m, DENSE_LIMIT):
        M = ZS @ (D[:, None] * ZS.T)
        M = np.asarray(0.5 * (M + M.T)) + shift * np.eye(k)
        return LinearOperator((k, k), matvec=lambda v: M @ np.ravel(v),
                              rmatvec=lambda v: M @ np.ravel(v), dtype=float)

    def mv(v):
        v = np.ravel(v)
        return ZS @ (D * (ZS.T @ v)) + shift * v

    return LinearOperator((k, k), matvec=mv, rmatvec=mv, dtype=float)


def _gram_extreme(ZS, which):
    """Extreme eigenvalue of ``ZS @ ZS.T`` via the smaller Gram matrix."""
    if sp.issparse(ZS):
        ZS = ZS.toarray()
    k, c = ZS.shape
    if min(k, c) == 0:
        return 0.0
    G = ZS @ ZS.T if k <= c else ZS.T @ ZS
    ev = np.linalg.eigvalsh(G)
    if which == "max":
        return float(ev[-1])
    # a wide Gram has zero eigenvalues the small one does not show
    return float(ev[0]) if k <= c else 0.0


def random_unit_features(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    Z = rng.standard_normal((n, m))
    return Z / np.linalg.norm(Z, axis=0)


@dataclass
class ClassificationInstance:
    Z: np.ndarray | sp.spmatrix
    labels: np.ndarray
    lam: float

    def __post_init__(self):
        _check_unit_columns(self.Z)
        if self.labels.shape != (self.Z.shape[1],):
            raise ValueError("need one label per feature column")

    @property
    def n(self):
        return self.Z.shape[0]

    @property
    def m(self):
        return self.Z.shape[1]


def gen_classification(n: int, m: int, seed: int, lam: float = 1e-3) -> ClassificationInstance:
    """Unit-norm Gaussian features with {0, 1} labels from a random hyperplane."""
    rng = np.random.default_rng(seed)
    Z = random_unit_features(n, m, rng)
    w = rng.standard_normal(n)
    labels = (Z.T @ w > 0).astype(float)
    return ClassificationInstance(Z, labels, lam)


class GemanMcClureOracle(SmoothOracle):
    """``f(x) = mean_j l(y_j - z_j^T x) + lam ||x||^2`` with the exact Hessian
    ``Z D Z^T + 2 lam I``, ``d_j = l''(t_j) / m``."""

    def __init__(self, inst: ClassificationInstance):
        self.inst = inst
        self.n, self.m = inst.n, inst.m
        self.lam = inst.lam
        # |l''| <= 1, so ||Z D Z^T|| <= ||Z||_F^2 / m
        self.lipschitz_bound = _fro2(inst.Z) / self.m + 2.0 * self.lam
        self.zeta = 0.0
        self._cache = _XCache()
        self._Zr = _row_major(inst.Z)

    def _margins(self, x):
        return self._cache.get(x, lambda z: self.inst.labels - self.inst.Z.T @ z)

    def curvature_weights(self, x):
        return gm_loss_d2(self._margins(np.asarray(x, dtype=float))) / self.m

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(gm_loss(self._margins(x)).mean()) + self.lam * float(x @ x)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        t = self._margins(x)
        return -(self.inst.Z @ (gm_loss_d1(t) / self.m)) + 2.0 * self.lam * x

    def restricted_operator(self, x, S):
        return _weighted_gram_operator(_rows(self._Zr, np.asarray(S)),
                                       self.curvature_weights(x), 2.0 * self.lam)

    def curvature_floor(self, x, S):
        """``2 lam + min(d) * ||Z[S, neg]||^2`` over the negative weights.

        For orthonormal negative-curvature features this is ``2 lam + min d``.
        """
        D = self.curvature_weights(x)
        neg = np.flatnonzero(D < 0)
        if neg.size == 0:
            return 2.0 * self.lam
        ZSn = self._Zr[np.asarray(S)][:, neg]
        if min(ZSn.shape) <= DENSE_LIMIT:
            scale = _gram_extreme(ZSn, "max")
        else:
            scale = _fro2(ZSn)
        return 2.0 * self.lam + float(D[neg].min()) * scale


def geman_mcclure_oracle(inst: ClassificationInstance) -> GemanMcClureOracle:
    return GemanMcClureOracle(inst)


def geman_mcclure_problem(inst: ClassificationInstance) -> CompositeProblem:
    return CompositeProblem(GemanMcClureOracle(inst), Zero(inst.n))


def geman_mcclure_eta(floor: float, mu: float) -> float:
    """``1.01 * max(-floor, mu)``; ``floor`` plays the role of ``2 lam + min_j d_j``."""
    return 1.01 * max(-floor, mu)


def geman_mcclure_eta_rule(oracle: GemanMcClureOracle):
    def rule(x, S, mu):
        return geman_mcclure_eta(oracle.curvature_floor(x, S), mu)
    return rule


@dataclass
class BiweightGroupInstance:
    A: np.ndarray | sp.spmatrix
    b: np.ndarray
    lam: float
    groups: np.ndarray

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.A.shape[1]


class BiweightOracle(SmoothOracle):
    """``f(x) = mean_j phi(a_j^T x - b_j)`` with the clamped curvature model
    ``Q = A diag(max(phi''/m, 1e-8)) A^T``."""

    def __init__(self, inst: BiweightGroupInstance):
        self.inst = inst
        self.n, self.m = inst.n, inst.m
        fro2 = _fro2(inst.A)
        # |phi''| <= 2 and phi'' >= -1/2
        self.lipschitz_bound = 2.0 * fro2 / self.m
        self.zeta = (0.5 / self.m + CLAMP) * fro2
        self._cache = _XCache()
        self._Ar = _row_major(inst.A)

    def _margins(self, x):
        return self._cache.get(x, lambda z: self.inst.A.T @ z - self.inst.b)

    def clamped_weights(self, x):
        return np.maximum(biweight_d2(self._margins(np.asarray(x, dtype=float))) / self.m, CLAMP)

    def value(self, x):
        return float(biweight(self._margins(np.asarray(x, dtype=float))).mean())

    def gradient(self, x):
        t = self._margins(np.asarray(x, dtype=float))
        return self.inst.A @ (biweight_d1(t) / self.m)

    def hessian_weights(self, x):
        return biweight_d2(self._margins(np.asarray(x, dtype=float))) / self.m

    def restricted_operator(self, x, S):
        return _weighted_gram_operator(_rows(self._Ar, np.asarray(S)), self.clamped_weights(x))

    def curvature_floor(self, x, S):
        S = np.asarray(S)
        if S.size > DENSE_LIMIT:
            return 0.0
        return float(self.clamped_weights(x).min()) * _gram_extreme(self._Ar[S], "min")


def biweight_eta(floor: float, mu: float) -> float:
    """``0.01 mu`` when the curvature already gives modulus ``mu``, else ``1.01 mu``."""
    return 0.01 * mu if floor + 0.01 * mu >= mu else 1.01 * mu


def biweight_eta_rule(oracle: BiweightOracle):
    def rule(x, S, mu):
        return biweight_eta(oracle.curvature_floor(x, S), mu)
    return rule


def biweight_group_instance(features, labels, n: int, lam: float = 1e-3,
                            width: int = GROUP_WIDTH):
    """Build the instance, its oracle and the width-5 group penalty."""
    if features.shape[0] != n:
        raise ValueError("features must have n rows")
    _check_unit_columns(features)
    labels = np.asarray(labels, dtype=float)
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        raise ValueError("biweight labels must be -1 or 1")
    reg = GroupL2.contiguous(n, lam, width)
    inst = BiweightGroupInstance(features, labels, lam, reg.bounds)
    return inst, BiweightOracle(inst), reg


def gen_biweight(n: int, m: int, seed: int, lam: float = 1e-3):
    rng = np.random.default_rng(seed)
    A = random_unit_features(n, m, rng)
    w = rng.standard_normal(n)
    labels = np.where(A.T @ w > 0, 1.0, -1.0)
    return biweight_group_instance(A, labels, n, lam)


def biweight_problem(inst, oracle, reg) -> CompositeProblem:
    return CompositeProblem(oracle, reg)
