"""Ground-truth schedules and observations for recovery experiments."""
from __future__ import annotations

import numpy as np

from .model import ModelParams, SimState, simulate
from .objective import ObservedSeries


def piecewise_schedule(
    num_regions: int,
    n_weeks: int,
    rng: np.random.Generator,
    block_weeks: int = 4,
    low: float = 0.3,
    high: float = 0.7,
) -> np.ndarray:
    """Per-region coefficients that stay constant for ``block_weeks`` at a time."""
    n_blocks = -(-n_weeks // block_weeks)
    blocks = rng.uniform(low, high, size=(n_blocks, num_regions))
    return np.repeat(blocks, block_weeks, axis=0)[:n_weeks]


def synthetic_observations(
    state0: SimState,
    truth: np.ndarray,
    params: ModelParams,
    start_week: int,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> ObservedSeries:
    """Simulate ``truth`` from ``state0`` and optionally add relative Gaussian noise."""
    end_week = start_week + truth.shape[0] - 1
    icu, _ = simulate(state0, truth, params, start_week, end_week)
    if noise > 0:
        if rng is None:
            raise ValueError("noise needs an rng")
        icu = np.maximum(icu * (1.0 + noise * rng.standard_normal(icu.shape)), 0.0)
    return ObservedSeries(icu, start_day=state0.day)
