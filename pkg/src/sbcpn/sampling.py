"""Block selection strategies.

Strategies operate on *units*: single coordinates, or whole regularizer
groups when constructed with ``unit_bounds``. Selected units are expanded to
a sorted coordinate index array on output.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

STRATEGY_NAMES = ("full", "uniform", "cyc-contig", "cyc-perm", "topk")


@dataclass
class StrategyConstants:
    p_min: Optional[float]
    c: Optional[float]


class SamplingStrategy:
    """Base class. ``n_units`` is the number of selectable units."""

    name = ""

    def __init__(self, n: int, unit_bounds=None):
        self.n = int(n)
        if unit_bounds is None:
            unit_bounds = np.arange(self.n + 1)
        self.unit_bounds = np.asarray(unit_bounds, dtype=np.int64)
        if self.unit_bounds[0] != 0 or self.unit_bounds[-1] != self.n:
            raise ValueError("unit bounds must partition [0, n)")
        self.n_units = len(self.unit_bounds) - 1

    def sample(self, rng: np.random.Generator, residual_abs=None) -> np.ndarray:
        units = self._select(rng, residual_abs)
        return self._expand(np.sort(np.asarray(units, dtype=np.int64)))

    def constants(self) -> StrategyConstants:
        return StrategyConstants(None, None)

    def _expand(self, units):
        if self.n_units == self.n:
            return units
        lo, hi = self.unit_bounds[units], self.unit_bounds[units + 1]
        return np.concatenate([np.arange(a, b) for a, b in zip(lo, hi)])

    def _unit_scores(self, residual_abs):
        r = np.asarray(residual_abs, dtype=float)
        if r.shape != (self.n,):
            raise ValueError(f"residual vector must have length {self.n}")
        if self.n_units == self.n:
            return r
        return np.sqrt(np.add.reduceat(r * r, self.unit_bounds[:-1]))

    def _select(self, rng, residual_abs):
        raise NotImplementedError

    def _check_size(self, s):
        if not 1 <= s <= self.n_units:
            raise ValueError(f"block size must lie in [1, {self.n_units}], got {s}")
        return int(s)


class Full(SamplingStrategy):
    name = "full"

    def _select(self, rng, residual_abs):
        return np.arange(self.n_units)

    def constants(self):
        return StrategyConstants(1.0, 1.0)


class UniformRandom(SamplingStrategy):
    """``s`` units drawn uniformly without replacement every call."""

    name = "uniform"

    def __init__(self, n, s, unit_bounds=None):
        super().__init__(n, unit_bounds)
        self.s = self._check_size(s)

    def _select(self, rng, residual_abs):
        return rng.choice(self.n_units, self.s, replace=False)

    def constants(self):
        return StrategyConstants(self.s / self.n_units, None)


class _Cyclic(SamplingStrategy):
    def __init__(self, n, s, unit_bounds=None):
        super().__init__(n, unit_bounds)
        self.s = self._check_size(s)
        self._queue: list[np.ndarray] = []

    def _select(self, rng, residual_abs):
        if not self._queue:
            self._queue = self._new_cycle(rng)
        return self._queue.pop(0)

    def _new_cycle(self, rng) -> list[np.ndarray]:
        raise NotImplementedError


class CyclicContiguous(_Cyclic):
    """Fixed contiguous windows of ``s`` units, visited in a fresh random order each cycle."""

    name = "cyc-contig"

    def _new_cycle(self, rng):
        starts = np.arange(0, self.n_units, self.s)
        windows = [np.arange(a, min(a + self.s, self.n_units)) for a in starts]
        return [windows[i] for i in rng.permutation(len(windows))]


class CyclicPermuted(_Cyclic):
    """Consecutive chunks of ``s`` units from a fresh random permutation each cycle."""

    name = "cyc-perm"

    def _new_cycle(self, rng):
        perm = rng.permutation(self.n_units)
        return [perm[a:a + self.s] for a in range(0, self.n_units, self.s)]


class TopK(SamplingStrategy):
    """The ``kk`` units with the largest residual magnitude; ties go to the lowest index."""

    name = "topk"

    def __init__(self, n, kk, unit_bounds=None):
        super().__init__(n, unit_bounds)
        self.kk = self._check_size(kk)

    def _select(self, rng, residual_abs):
        if residual_abs is None:
            raise ValueError("top-k sampling needs the residual magnitudes")
        scores = self._unit_scores(residual_abs)
        return np.argsort(-scores, kind="stable")[:self.kk]

    def constants(self):
        return StrategyConstants(None, self.kk / self.n_units)


def sample_block(strategy: SamplingStrategy, rng, residual_abs=None) -> np.ndarray:
    return strategy.sample(rng, residual_abs)


def strategy_constants(strategy: SamplingStrategy, n: int | None = None) -> StrategyConstants:
    if n is not None and n != strategy.n:
        raise ValueError("strategy was built for a different dimension")
    return strategy.constants()


def make_strategy(name: str, n: int, size: int | None = None, unit_bounds=None) -> SamplingStrategy:
    """Build a strategy from its CLI name."""
    if name == "full":
        return Full(n, unit_bounds)
    if size is None:
        raise ValueError(f"strategy {name!r} needs a block size")
    classes = {"uniform": UniformRandom, "cyc-contig": CyclicContiguous,
               "cyc-perm": CyclicPermuted, "topk": TopK}
    try:
        cls = classes[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; expected one of {STRATEGY_NAMES}") from None
    return cls(n, size, unit_bounds)
