"""Piecewise-linear functions on the integer grid j / Delta."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridFunction:
    j: np.ndarray        # consecutive integers
    values: np.ndarray
    delta: int
    tag: str = ""

    def __post_init__(self):
        j = np.asarray(self.j, dtype=np.int64)
        v = np.asarray(self.values, dtype=float)
        if j.shape != v.shape or j.ndim != 1:
            raise ValueError("knots and values must be 1-d of equal length")
        if j.size > 1 and np.any(np.diff(j) != 1):
            raise ValueError("knots must be consecutive integers")
        if self.delta <= 0:
            raise ValueError("grid scale Delta must be positive")
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "values", v)

    @property
    def alpha(self) -> np.ndarray:
        return self.j / self.delta

    @property
    def j_lo(self) -> int:
        return int(self.j[0])

    @property
    def j_hi(self) -> int:
        return int(self.j[-1])

    def at(self, j):
        """Value at integer knot(s)."""
        j = np.asarray(j, dtype=np.int64)
        if np.any(j < self.j_lo) or np.any(j > self.j_hi):
            raise IndexError("knot outside the grid")
        out = self.values[j - self.j_lo]
        return float(out) if out.ndim == 0 else out

    def __call__(self, alpha):
        a = np.asarray(alpha, dtype=float)
        lo, hi = self.j_lo / self.delta, self.j_hi / self.delta
        if np.any(a < lo - 1e-12) or np.any(a > hi + 1e-12):
            raise ValueError("alpha outside the grid")
        out = np.interp(a, self.alpha, self.values)
        return float(out) if out.ndim == 0 else out

    def restrict(self, j_lo: int, j_hi: int) -> "GridFunction":
        m = (self.j >= j_lo) & (self.j <= j_hi)
        return GridFunction(self.j[m], self.values[m], self.delta, self.tag)

    def slopes(self) -> np.ndarray:
        """Derivative on each segment (j, j+1), in alpha units."""
        return np.diff(self.values) * self.delta

    def nearest_knot(self, alpha: float) -> int:
        return int(np.clip(np.rint(alpha * self.delta), self.j_lo, self.j_hi))

    def with_values(self, values, tag=None) -> "GridFunction":
        return GridFunction(self.j, values, self.delta, self.tag if tag is None else tag)
