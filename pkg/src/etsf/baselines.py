"""Deterministic statistical baselines; the seasonal naive forecast doubles
as the scaling denominator of the benchmark's error metric."""

from __future__ import annotations

import numpy as np


def mean_forecast(x: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the input mean across the horizon."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot forecast from an empty input")
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")
    return np.full(horizon, x.mean())


def naive_forecast(x: np.ndarray, horizon: int, seasonality: int) -> np.ndarray:
    """Tile the last observed season across the horizon.  When fewer than
    ``seasonality`` values are observed the available suffix is tiled
    instead (early prefixes are short by construction)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot forecast from an empty input")
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if seasonality < 1:
        raise ValueError(f"seasonality must be >= 1, got {seasonality}")
    season = x[-min(seasonality, x.size):]
    reps = int(np.ceil(horizon / season.size))
    return np.tile(season, reps)[:horizon]
