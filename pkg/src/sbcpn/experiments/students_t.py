"""l1-regularized Student's t regression with random cosine measurements."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator

from ..problem import DENSE_LIMIT, CompositeProblem, SmoothOracle, _XCache
from ..regularizers import L1
from .dct import DenseIsometry, PartialDCT

NU = 0.25
NOISE_SCALE = 0.1
NOISE_DOF = 5
# dense copies of A are kept only below this many entries
DENSE_ENTRIES = 4_000_000
SPECTRAL_MARGIN = 0.01


@dataclass
class StudentsTInstance:
    A: PartialDCT | DenseIsometry
    b: np.ndarray
    nu: float
    lam: float
    x_true: np.ndarray

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.A.shape[0]


def student_t_noise(rng: np.random.Generator, size: int, dof: int = NOISE_DOF) -> np.ndarray:
    return rng.standard_normal(size) / np.sqrt(rng.chisquare(dof, size) / dof)


def sparse_signal(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n // 40`` random spikes of magnitude ``10**U[0, 1]`` with random signs."""
    k = n // 40
    x = np.zeros(n)
    idx = rng.choice(n, k, replace=False)
    signs = rng.choice([-1.0, 1.0], k)
    x[idx] = signs * 10.0 ** rng.uniform(0.0, 1.0, k)
    return x


def gen_students_t(n: int, seed: int, operator: str = "dct", m: int | None = None,
                   nu: float = NU) -> StudentsTInstance:
    """Random instance with ``m = 2n`` measurements by default.

    ``operator="dct"`` takes ``m`` random rows of the ``m``-point orthonormal
    DCT of the zero-padded signal; ``"gaussian"`` uses a Gaussian matrix with
    orthonormalized columns.
    """
    if n < 40:
        raise ValueError("n must be at least 40")
    m = 2 * n if m is None else int(m)
    rng = np.random.default_rng(seed)
    x_true = sparse_signal(n, rng)
    if operator == "dct":
        A = PartialDCT(n, m, np.sort(rng.choice(m, m, replace=False)))
    elif operator == "gaussian":
        A = DenseIsometry.random(m, n, rng)
    else:
        raise ValueError(f"unknown operator {operator!r}")
    b = A.matvec(x_true) + NOISE_SCALE * student_t_noise(rng, m)
    # gradient of f at 0 is A^T (2 r / (nu + r^2)) with r = -b
    g0 = A.rmatvec(-2.0 * b / (nu + b * b))
    lam = 0.1 * float(np.max(np.abs(g0)))
    return StudentsTInstance(A, b, nu, lam, x_true)


class StudentsTOracle(SmoothOracle):
    """``f(x) = sum_i log(1 + r_i^2 / nu)`` with ``r = A x - b``; exact Hessian.

    ``floor="analytic"`` reports ``min_i D_ii``. ``floor="spectral"`` reports
    the smallest eigenvalue of the dense restricted Hessian instead, for blocks
    of at most ``DENSE_LIMIT`` coordinates, provided that eigenvalue is at
    least ``SPECTRAL_MARGIN * L``. Near-singular restrictions keep the analytic
    value: a tight floor there leaves the inner problem too ill conditioned
    for a first-order inner solver. Both values are valid lower bounds.
    """

    def __init__(self, inst: StudentsTInstance, floor: str = "spectral"):
        if floor not in ("spectral", "analytic"):
            raise ValueError(f"unknown floor mode {floor!r}")
        self.floor_mode = floor
        self.inst = inst
        self.n = inst.n
        self.nu = inst.nu
        # |d^2/dr^2 log(1 + r^2/nu)| <= 2/nu and ||A|| <= 1
        self.lipschitz_bound = 2.0 / inst.nu
        self.zeta = 0.0
        self._cache = _XCache()
        self._dense = None
        if floor == "spectral" and inst.m * inst.n <= DENSE_ENTRIES:
            self._dense = inst.A.dense()

    def _resid(self, x):
        return self._cache.get(x, lambda z: self.inst.A.matvec(z) - self.inst.b)

    def _curv(self, x):
        r = self._resid(x)
        r2 = r * r
        return 2.0 * (self.nu - r2) / (self.nu + r2) ** 2

    def value(self, x):
        r = self._resid(np.asarray(x, dtype=float))
        return float(np.log1p(r * r / self.nu).sum())

    def gradient(self, x):
        r = self._resid(np.asarray(x, dtype=float))
        return self.inst.A.rmatvec(2.0 * r / (self.nu + r * r))

    def restricted_operator(self, x, S):
        S = np.asarray(S)
        D = self._curv(np.asarray(x, dtype=float))
        A, n = self.inst.A, self.n

        def mv(v):
            z = np.zeros(n)
            z[S] = np.ravel(v)
            return A.rmatvec(D * A.matvec(z))[S]

        return LinearOperator((S.size, S.size), matvec=mv, rmatvec=mv, dtype=float)

    def analytic_floor(self, x):
        dmin = float(self._curv(np.asarray(x, dtype=float)).min())
        # A_S^T A_S = I for an isometry; otherwise only A_S^T A_S <= I
        return dmin if self.inst.A.is_isometry else min(dmin, 0.0)

    def curvature_floor(self, x, S):
        x = np.asarray(x, dtype=float)
        S = np.asarray(S)
        analytic = self.analytic_floor(x)
        if self.floor_mode == "analytic" or S.size > DENSE_LIMIT:
            return analytic
        D = self._curv(x)
        AS = self._dense[:, S] if self._dense is not None else None
        if AS is None:
            M = self.dense_restricted(x, S)
        else:
            M = AS.T @ (D[:, None] * AS)
        ev = np.linalg.eigvalsh(0.5 * (M + M.T))
        # absorb eigensolver rounding so the value stays a lower bound
        lo = float(ev[0]) - 1e-10 * max(1.0, float(np.abs(ev).max()))
        return lo if lo >= SPECTRAL_MARGIN * self.lipschitz_bound else analytic

    def operator_norm_bound(self, x, S):
        return float(np.abs(self._curv(np.asarray(x, dtype=float))).max())


def students_t_oracle(inst: StudentsTInstance, floor: str = "spectral") -> StudentsTOracle:
    return StudentsTOracle(inst, floor)


def students_t_problem(inst: StudentsTInstance, floor: str = "spectral") -> CompositeProblem:
    return CompositeProblem(StudentsTOracle(inst, floor), L1(inst.n, inst.lam))


def save_students_t(inst: StudentsTInstance, path) -> None:
    """Columnar text: ``n``, ``m``, then ``N, nu, lam``, the ``m`` DCT rows,
    ``x_true`` and ``b``, one value per line."""
    if not isinstance(inst.A, PartialDCT):
        raise ValueError("only partial-DCT instances can be serialized")
    lines = [str(inst.n), str(inst.m), str(inst.A.N)]
    lines += [f"{inst.nu:.17g}", f"{inst.lam:.17g}"]
    lines += [str(int(r)) for r in inst.A.rows]
    lines += [f"{v:.17g}" for v in inst.x_true]
    lines += [f"{v:.17g}" for v in inst.b]
    Path(path).write_text("\n".join(lines) + "\n")


def load_students_t(path) -> StudentsTInstance:
    tok = Path(path).read_text().split()
    n, m, N = int(tok[0]), int(tok[1]), int(tok[2])
    nu, lam = float(tok[3]), float(tok[4])
    pos = 5
    rows = np.array(tok[pos:pos + m], dtype=np.int64)
    pos += m
    x_true = np.array(tok[pos:pos + n], dtype=float)
    pos += n
    b = np.array(tok[pos:pos + m], dtype=float)
    if b.size != m or pos + m != len(tok):
        raise ValueError(f"{path}: malformed instance file")
    return StudentsTInstance(PartialDCT(n, N, rows), b, nu, lam, x_true)
