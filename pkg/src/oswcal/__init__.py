"""Sliding-window genetic-algorithm calibration of time/region-varying
transmission coefficients in a SEIR-ICU model."""

from .calibrator import (
    AdjustConfig,
    CalibrationResult,
    SeirIcuModel,
    WindowConfig,
    adjust_bounds,
    calibrate_auto,
    calibrate_oneoff,
    directional_diff,
    window_schedule,
)
from .ga import BoundsTable, GaConfig, Population, run_ga
from .model import ModelParams, SimState, init_state, simulate, simulate_ensemble, step_day
from .objective import ObservedSeries, fitness, rmse

__version__ = "0.1.0"

__all__ = [
    "AdjustConfig",
    "BoundsTable",
    "CalibrationResult",
    "GaConfig",
    "ModelParams",
    "ObservedSeries",
    "Population",
    "SeirIcuModel",
    "SimState",
    "WindowConfig",
    "adjust_bounds",
    "calibrate_auto",
    "calibrate_oneoff",
    "directional_diff",
    "fitness",
    "init_state",
    "rmse",
    "run_ga",
    "simulate",
    "simulate_ensemble",
    "step_day",
    "window_schedule",
]
