"""Goodness of fit between simulated and observed ICU occupancy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class ObservedSeries:
    """Dense daily ICU occupancy, ``values[i, j]`` = day ``start_day + i``, region ``j``."""

    values: np.ndarray
    start_day: int = 0

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("observed values must be a non-empty days x regions matrix")
        if not np.all(np.isfinite(values)):
            raise ValueError("observed values contain missing entries")
        if np.any(values < 0):
            raise ValueError("observed values must be non-negative")
        object.__setattr__(self, "values", values)

    @property
    def end_day(self) -> int:
        """Last covered day (inclusive)."""
        return self.start_day + self.values.shape[0] - 1

    @property
    def num_regions(self) -> int:
        return self.values.shape[1]

    def covers(self, day: int) -> bool:
        return self.start_day <= day <= self.end_day

    def slice_days(self, first: int, last: int) -> np.ndarray:
        """Rows for days ``first..last`` inclusive; every day must be covered."""
        if not (self.covers(first) and self.covers(last)) or last < first:
            raise ValueError(
                f"observed data covers days {self.start_day}..{self.end_day}, "
                f"requested {first}..{last}"
            )
        return self.values[first - self.start_day : last - self.start_day + 1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ObservedSeries):
            return NotImplemented
        return self.start_day == other.start_day and np.array_equal(self.values, other.values)


def rmse(sim, obs) -> float:
    """Root mean squared error over an ``m x n`` grid of days and regions."""
    sim = np.asarray(sim, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if sim.shape != obs.shape:
        raise ValueError(f"shape mismatch: simulated {sim.shape} vs observed {obs.shape}")
    if sim.ndim != 2 or sim.size == 0:
        raise ValueError("rmse needs a non-empty days x regions matrix")
    m, n = sim.shape
    resid = obs - sim
    return float(np.sqrt(np.sum(resid * resid) / (m * n)))


def fitness(obj: float) -> float:
    if obj < 0:
        raise ValueError("objective must be non-negative")
    return -obj
