"""Overlapping-sliding-window calibration driven by the genetic algorithm.

The timeline ``start_week..current_week`` is cut into windows of
``opt_window_size`` weeks that advance by ``opt_shift_size``.  For each window
the GA fits the window's transmission coefficients starting from the model
state handed over by the previous window.  Afterwards the search interval is
moved up or down according to the sign of the misfit on the window's last day,
and the model is advanced to the start of the next window to produce the
state it inherits.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .ga import BoundsTable, GaConfig, derive_seed, run_ga
from .model import (
    MU_MAX,
    MU_MIN,
    ModelParams,
    SimState,
    simulate_ensemble,
    week_first_day,
    week_last_day,
)
from .objective import ObservedSeries, fitness, rmse

log = logging.getLogger(__name__)

# seed-derivation tags, combined with (master_seed, window start week)
_GA_STREAM = 1
_ADJUST_STREAM = 2


@dataclass(frozen=True)
class WindowConfig:
    start_week: int
    current_week: int
    opt_window_size: int = 4
    opt_shift_size: int = 1
    auto_calibrate: bool = True
    sim_reload: bool = False

    def __post_init__(self) -> None:
        if self.opt_window_size < 1:
            raise ValueError("opt_window_size must be >= 1")
        if self.opt_shift_size < 1:
            raise ValueError("opt_shift_size must be >= 1")
        if self.opt_shift_size > self.opt_window_size:
            raise ValueError("opt_shift_size exceeds opt_window_size (shift exceeds window)")
        if self.start_week < 1:
            raise ValueError("start_week must be >= 1")
        if self.start_week > self.current_week:
            raise ValueError("start_week exceeds current_week")


@dataclass(frozen=True)
class AdjustConfig:
    """Misfit-to-step-size mapping used when moving the search interval."""

    kappa: float = 0.5
    coeff_min: float = 0.05
    coeff_max: float = 0.3
    # relative misfit below which the last-day difference counts as zero
    tolerance: float = 0.0
    # "window": mean over every week of the window; "handover": only the
    # weeks that are final once the window slides on
    average_over: str = "window"

    def __post_init__(self) -> None:
        if self.tolerance < 0:
            raise ValueError("adjust tolerance must be non-negative")
        if self.average_over not in ("window", "handover"):
            raise ValueError("average_over must be 'window' or 'handover'")
        if self.kappa < 0:
            raise ValueError("adjust kappa must be non-negative")
        if not 0 <= self.coeff_min <= self.coeff_max:
            raise ValueError("adjust coefficients must satisfy 0 <= coeff_min <= coeff_max")


class CalibratableModel(Protocol):
    num_regions: int

    def run(
        self,
        state: SimState,
        schedule: np.ndarray,
        start_week: int,
        end_week: int,
        n_replicates: int,
        seed: int,
    ) -> tuple[np.ndarray, SimState]: ...


@dataclass(frozen=True)
class SeirIcuModel:
    """Adapter exposing the SEIR-ICU simulator through the model contract."""

    params: ModelParams

    @property
    def num_regions(self) -> int:
        return self.params.num_regions

    def run(self, state, schedule, start_week, end_week, n_replicates, seed):
        return simulate_ensemble(
            state, schedule, self.params, start_week, end_week, n_replicates, seed
        )


@dataclass(eq=False)
class CalibrationResult:
    schedule: np.ndarray  # (weeks, regions), row 0 is first_week
    first_week: int
    per_window_rmse: list[float]
    final_bounds: BoundsTable
    restart_state: SimState
    restart_week: int
    windows: list[tuple[int, int]] = field(default_factory=list)
    fit: np.ndarray | None = None  # simulated ICU along the handed-over trajectory
    fit_start_day: int = 0

    @property
    def last_week(self) -> int:
        return self.first_week + self.schedule.shape[0] - 1


def window_schedule(cfg: WindowConfig) -> list[tuple[int, int]]:
    windows = []
    start = cfg.start_week
    while start <= cfg.current_week:
        end = min(start + cfg.opt_window_size - 1, cfg.current_week)
        windows.append((start, end))
        start += cfg.opt_shift_size
    return windows


def adjust_bounds(avg_mu, diff, correct_coeff):
    """New search interval from the window's mean coefficient and misfit sign.

    Simulated below observed (``diff < 0``) pushes the interval up to
    ``[avg, avg + coeff]``; above observed pushes it down to
    ``[avg - coeff, avg]``; an exact match opens it both ways.  Edges are
    clamped to the global range.  Works elementwise on arrays.
    """
    avg = np.clip(np.asarray(avg_mu, dtype=float), MU_MIN, MU_MAX)
    diff = np.asarray(diff, dtype=float)
    coeff = np.asarray(correct_coeff, dtype=float)
    down = np.maximum(avg - coeff, MU_MIN)
    up = np.minimum(avg + coeff, MU_MAX)
    lb = np.where(diff < 0, avg, down)
    ub = np.where(diff > 0, avg, up)
    if lb.ndim == 0:
        return float(lb), float(ub)
    return lb, ub


def directional_diff(
    eval_icu: np.ndarray,
    obs: ObservedSeries,
    end_week: int,
    adjust: AdjustConfig = AdjustConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """Per-region simulated-minus-observed ICU on the last day of ``end_week``.

    ``eval_icu`` must end on that day.  The step size is
    ``clip(kappa * |diff| / max(observed, 1), coeff_min, coeff_max)``.
    """
    last_day = week_last_day(end_week)
    if not obs.covers(last_day):
        raise ValueError(f"observed data does not cover day {last_day} (end of week {end_week})")
    observed = obs.values[last_day - obs.start_day]
    simulated = np.asarray(eval_icu, dtype=float)[-1]
    diff = simulated - observed
    relative = np.abs(diff) / np.maximum(observed, 1.0)
    diff = np.where(relative <= adjust.tolerance, 0.0, diff)
    coeff = adjust.kappa * relative
    return diff, np.clip(coeff, adjust.coeff_min, adjust.coeff_max)


def _window_target(obs: ObservedSeries, ws: int, we: int) -> tuple[int, np.ndarray]:
    """Observed rows for a window plus the offset of the first one.

    The first window may begin before the observations do; it is then fitted
    on the observed part only.
    """
    first, last = week_first_day(ws), week_last_day(we)
    if not obs.covers(last):
        raise ValueError(
            f"observed data (days {obs.start_day}..{obs.end_day}) does not cover "
            f"window weeks {ws}..{we}"
        )
    lo = max(first, obs.start_day)
    return lo - first, obs.slice_days(lo, last)


def _fit_window(model, state, ws, we, bounds, gcfg, obs, replicates, master_seed, executor):
    num_regions = model.num_regions
    n_weeks = we - ws + 1
    offset, target = _window_target(obs, ws, we)

    def eval_fn(genes: np.ndarray, seed: int) -> float:
        traj, _ = model.run(state, genes.reshape(n_weeks, num_regions), ws, we, replicates, seed)
        return fitness(rmse(traj[offset:], target))

    res = run_ga(
        bounds, n_weeks, gcfg, eval_fn, derive_seed(master_seed, ws, _GA_STREAM), executor=executor
    )
    return res.best.reshape(n_weeks, num_regions), -res.best_fitness


def _assemble(rows: dict[int, np.ndarray]) -> tuple[np.ndarray, int]:
    weeks = sorted(rows)
    if weeks != list(range(weeks[0], weeks[-1] + 1)):
        raise ValueError("calibrated weeks are not contiguous")
    return np.vstack([rows[w] for w in weeks]), weeks[0]


def calibrate_auto(
    wcfg: WindowConfig,
    gcfg: GaConfig,
    model: CalibratableModel,
    obs: ObservedSeries,
    bounds0: BoundsTable,
    start_state: SimState,
    *,
    replicates: int = 1,
    master_seed: int = 0,
    adjust: AdjustConfig = AdjustConfig(),
    executor: ThreadPoolExecutor | None = None,
    prior_schedule: tuple[np.ndarray, int] | None = None,
    max_windows: int | None = None,
) -> CalibrationResult:
    """Calibrate every window of ``wcfg`` in turn.

    ``start_state`` must sit on the first day of ``wcfg.start_week``; it is
    either a fresh seeded state or one reloaded from a restart file.
    ``prior_schedule`` (values, first week) carries weeks calibrated by an
    earlier run so that the returned schedule is complete.  ``max_windows``
    stops after that many windows; resuming from the returned restart state
    with ``start_week = restart_week + 1`` continues the same run exactly.
    """
    if obs.num_regions != model.num_regions:
        raise ValueError(
            f"observed data has {obs.num_regions} regions, model has {model.num_regions}"
        )
    if bounds0.num_regions != model.num_regions:
        raise ValueError("bounds do not match the number of regions")
    if start_state.day != week_first_day(wcfg.start_week):
        raise ValueError(
            f"starting state is at day {start_state.day}, not the first day of week "
            f"{wcfg.start_week}"
        )

    rows: dict[int, np.ndarray] = {}
    if prior_schedule is not None:
        values, first = prior_schedule
        for k, row in enumerate(np.asarray(values, dtype=float)):
            if first + k < wcfg.start_week:
                rows[first + k] = row.copy()

    windows = window_schedule(wcfg)
    if max_windows is not None:
        windows = windows[:max_windows]

    state = start_state
    bounds = bounds0.copy()
    per_window: list[float] = []
    fit_chunks: list[np.ndarray] = []
    restart_week = wcfg.start_week - 1
    for ws, we in windows:
        best, err = _fit_window(
            model, state, ws, we, bounds, gcfg, obs, replicates, master_seed, executor
        )
        for k in range(best.shape[0]):
            rows[ws + k] = best[k]
        per_window.append(err)

        adjust_seed = derive_seed(master_seed, ws, _ADJUST_STREAM)
        eval_icu, _ = model.run(state, best, ws, we, replicates, adjust_seed)
        diff, coeff = directional_diff(eval_icu, obs, we, adjust)
        # hand over the state at the start of the next window
        handover = min(ws + wcfg.opt_shift_size - 1, we)
        averaged = best if adjust.average_over == "window" else best[: handover - ws + 1]
        lb, ub = adjust_bounds(averaged.mean(axis=0), diff, coeff)
        bounds = BoundsTable(lb, ub)
        traj, state = model.run(state, best[: handover - ws + 1], ws, handover, 1, adjust_seed)
        fit_chunks.append(traj)
        restart_week = handover
        log.info("window %d-%d: rmse %.6g, handover after week %d", ws, we, err, handover)

    schedule, first_week = _assemble(rows)
    return CalibrationResult(
        schedule=schedule,
        first_week=first_week,
        per_window_rmse=per_window,
        final_bounds=bounds,
        restart_state=state,
        restart_week=restart_week,
        windows=windows,
        fit=np.vstack(fit_chunks),
        fit_start_day=week_first_day(wcfg.start_week),
    )


def calibrate_oneoff(
    weeks: tuple[int, int],
    gcfg: GaConfig,
    model: CalibratableModel,
    obs: ObservedSeries,
    bounds: BoundsTable,
    start_state: SimState,
    *,
    replicates: int = 1,
    master_seed: int = 0,
    executor: ThreadPoolExecutor | None = None,
) -> CalibrationResult:
    """Single GA post-tune of ``weeks`` from a restart state; no sliding, no bound moves."""
    ws, we = weeks
    if we < ws or ws < 1:
        raise ValueError(f"invalid week range {ws}..{we}")
    if start_state.day != week_first_day(ws):
        raise ValueError(
            f"restart state is at day {start_state.day}, not the first day of week {ws}"
        )
    best, err = _fit_window(
        model, start_state, ws, we, bounds, gcfg, obs, replicates, master_seed, executor
    )
    traj, state = model.run(
        start_state, best, ws, we, 1, derive_seed(master_seed, ws, _ADJUST_STREAM)
    )
    log.info("one-off weeks %d-%d: rmse %.6g", ws, we, err)
    return CalibrationResult(
        schedule=best,
        first_week=ws,
        per_window_rmse=[err],
        final_bounds=bounds.copy(),
        restart_state=state,
        restart_week=we,
        windows=[(ws, we)],
        fit=traj,
        fit_start_day=week_first_day(ws),
    )
