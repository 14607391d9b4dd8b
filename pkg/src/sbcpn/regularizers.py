"""Separable convex regularizers with exact proximal maps.

Every regularizer is a sum of independent pieces acting on contiguous
coordinate ranges. Coordinate-separable variants have width-one pieces;
``GroupL2`` uses wider contiguous groups.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def soft_threshold(u, thresh):
    """Elementwise ``sign(u) * max(|u| - thresh, 0)``."""
    u = np.asarray(u, dtype=float)
    return np.sign(u) * np.maximum(np.abs(u) - thresh, 0.0)


def block_soft_threshold(u, thresh):
    """Shrink the whole vector ``u`` towards zero by ``thresh`` in norm."""
    u = np.asarray(u, dtype=float)
    nrm = np.linalg.norm(u)
    if nrm <= thresh:
        return np.zeros_like(u)
    return u * (1.0 - thresh / nrm)


def _check_step(t):
    if not t > 0:
        raise ValueError(f"prox step must be positive, got {t}")


class SeparableRegularizer:
    """Base class for ``g(x) = sum_p psi_p(x[bounds[p]:bounds[p+1]])``.

    Subclasses set ``n`` and ``bounds`` (strictly increasing, starting at 0 and
    ending at ``n``) and implement ``_piece_value`` and ``_piece_prox``.
    """

    n: int
    bounds: np.ndarray

    @property
    def num_pieces(self) -> int:
        return len(self.bounds) - 1

    def piece_slice(self, p: int) -> slice:
        return slice(int(self.bounds[p]), int(self.bounds[p + 1]))

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {x.shape}")
        return float(sum(self._piece_value(x[self.piece_slice(p)])
                         for p in range(self.num_pieces)))

    def prox_piece(self, piece_index: int, u, t: float):
        """Proximal map of ``t * psi_piece`` at ``u``."""
        _check_step(t)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        width = self.bounds[piece_index + 1] - self.bounds[piece_index]
        if u.shape != (width,):
            raise ValueError(f"piece {piece_index} has width {width}, got {u.shape}")
        return self._piece_prox(u, t)

    def prox(self, u, t: float = 1.0):
        """Proximal map of ``t * g``, applied piece by piece."""
        _check_step(t)
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {u.shape}")
        out = np.empty_like(u)
        for p in range(self.num_pieces):
            sl = self.piece_slice(p)
            out[sl] = self._piece_prox(u[sl], t)
        return out

    def respects_pieces(self, indices) -> bool:
        """True when ``indices`` is a union of whole pieces."""
        idx = np.asarray(indices)
        if idx.size == 0:
            return False
        mask = np.zeros(self.n, dtype=bool)
        mask[idx] = True
        starts = self.bounds[:-1]
        counts = np.add.reduceat(mask.astype(np.int64), starts)
        widths = np.diff(self.bounds)
        return bool(np.all((counts == 0) | (counts == widths)))

    def restrict(self, indices) -> "SeparableRegularizer":
        """Regularizer acting on the sub-vector ``x[indices]``."""
        raise NotImplementedError

    def _piece_value(self, z) -> float:
        raise NotImplementedError

    def _piece_prox(self, u, t):
        raise NotImplementedError


@dataclass
class Zero(SeparableRegularizer):
    n: int
    bounds: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.bounds = np.arange(self.n + 1)

    def value(self, x) -> float:
        x = np.asarray(x)
        if x.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {x.shape}")
        return 0.0

    def prox(self, u, t: float = 1.0):
        _check_step(t)
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {u.shape}")
        return u.copy()

    def restrict(self, indices):
        return Zero(len(indices))

    def _piece_value(self, z):
        return 0.0

    def _piece_prox(self, u, t):
        return u.copy()


@dataclass
class L1(SeparableRegularizer):
    """``lam * ||x||_1``."""

    n: int
    lam: float
    bounds: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("L1 weight must be positive")
        self.bounds = np.arange(self.n + 1)

    # vectorised overrides; the per-piece loop is only used by prox_piece
    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {x.shape}")
        return float(self.lam * np.abs(x).sum())

    def prox(self, u, t: float = 1.0):
        _check_step(t)
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {u.shape}")
        return soft_threshold(u, t * self.lam)

    def restrict(self, indices):
        return L1(len(indices), self.lam)

    def _piece_value(self, z):
        return self.lam * float(np.abs(z).sum())

    def _piece_prox(self, u, t):
        return soft_threshold(u, t * self.lam)


@dataclass
class GroupL2(SeparableRegularizer):
    """``lam * sum_p ||x_{G_p}||`` over contiguous groups.

    ``bounds`` are the group boundaries, e.g. ``[0, 5, 10, 12]`` for three
    groups of a 12-vector.
    """

    n: int
    lam: float
    bounds: np.ndarray

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("group weight must be positive")
        b = np.asarray(self.bounds, dtype=np.int64)
        if b[0] != 0 or b[-1] != self.n or np.any(np.diff(b) <= 0):
            raise ValueError("group bounds must partition [0, n) into nonempty ranges")
        self.bounds = b
        self._widths = np.diff(b)

    @classmethod
    def contiguous(cls, n: int, lam: float, width: int = 5) -> "GroupL2":
        """Consecutive groups of ``width`` coordinates; the last may be shorter."""
        b = np.arange(0, n, width)
        return cls(n, lam, np.append(b, n))

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {x.shape}")
        sq = np.add.reduceat(x * x, self.bounds[:-1])
        return float(self.lam * np.sqrt(sq).sum())

    def prox(self, u, t: float = 1.0):
        _check_step(t)
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {u.shape}")
        norms = np.sqrt(np.add.reduceat(u * u, self.bounds[:-1]))
        thresh = t * self.lam
        scale = np.zeros_like(norms)
        keep = norms > thresh
        scale[keep] = 1.0 - thresh / norms[keep]
        return u * np.repeat(scale, self._widths)

    def restrict(self, indices):
        idx = np.asarray(indices)
        if not self.respects_pieces(idx):
            raise ValueError("index set splits a group")
        mask = np.zeros(self.n, dtype=bool)
        mask[idx] = True
        widths = np.diff(self.bounds)[mask[self.bounds[:-1]]]
        return GroupL2(len(idx), self.lam, np.concatenate([[0], np.cumsum(widths)]))

    def _piece_value(self, z):
        return self.lam * float(np.linalg.norm(z))

    def _piece_prox(self, u, t):
        return block_soft_threshold(u, t * self.lam)
