"""Partial-DCT and orthonormal Gaussian measurement operators."""
from __future__ import annotations

import numpy as np
import scipy.fft


def dct_matrix(N: int) -> np.ndarray:
    """Dense orthonormal DCT-II matrix (``O(N^2)``, for testing)."""
    k = np.arange(N)[:, None]
    j = np.arange(N)[None, :]
    C = np.cos(np.pi * (2 * j + 1) * k / (2 * N)) * np.sqrt(2.0 / N)
    C[0] *= np.sqrt(0.5)
    return C


def dct(x) -> np.ndarray:
    return scipy.fft.dct(np.asarray(x, dtype=float), type=2, norm="ortho")


def idct(y) -> np.ndarray:
    return scipy.fft.idct(np.asarray(y, dtype=float), type=2, norm="ortho")


class PartialDCT:
    """``A x = dct(pad(x, N))[rows]`` for ``x`` of length ``n``.

    With ``rows = range(N)`` the columns of ``A`` are orthonormal, so
    ``||A x|| = ||x||`` and ``||A|| = 1``.
    """

    def __init__(self, n: int, N: int, rows):
        if N < n:
            raise ValueError("transform length must be at least n")
        self.n, self.N = int(n), int(N)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.m = self.rows.size
        if self.rows.min() < 0 or self.rows.max() >= N or np.unique(self.rows).size != self.m:
            raise ValueError("rows must be distinct indices into the transform")
        self.is_isometry = self.m == self.N

    @property
    def shape(self):
        return (self.m, self.n)

    def matvec(self, x):
        z = np.zeros(self.N)
        z[:self.n] = x
        return dct(z)[self.rows]

    def rmatvec(self, y):
        z = np.zeros(self.N)
        z[self.rows] = y
        return idct(z)[:self.n]

    def dense(self) -> np.ndarray:
        eye = np.zeros((self.N, self.n))
        eye[np.arange(self.n), np.arange(self.n)] = 1.0
        return scipy.fft.dct(eye, type=2, norm="ortho", axis=0)[self.rows]


class DenseIsometry:
    """Gaussian matrix with orthonormalized columns (``m >= n``)."""

    def __init__(self, M):
        self.M = np.asarray(M, dtype=float)
        self.m, self.n = self.M.shape
        self.is_isometry = True

    @classmethod
    def random(cls, m: int, n: int, rng: np.random.Generator):
        if m < n:
            raise ValueError("need m >= n for orthonormal columns")
        Qm, _ = np.linalg.qr(rng.standard_normal((m, n)))
        return cls(Qm)

    @property
    def shape(self):
        return (self.m, self.n)

    def matvec(self, x):
        return self.M @ x

    def rmatvec(self, y):
        return self.M.T @ y

    def dense(self):
        return self.M
