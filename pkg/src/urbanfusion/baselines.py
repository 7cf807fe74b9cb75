"""Historical-average and per-tract random-forest baselines."""

import logging

import numpy as np
from sklearn.ensemble import RandomForestRegressor

logger = logging.getLogger(__name__)


class BaselineError(ValueError):
    pass


def time_slots(time_index, interval: int) -> tuple[np.ndarray, int]:
    """Time-of-day slot of every step; daily (or coarser) data has a single slot."""
    if interval >= 24:
        return np.zeros(len(time_index), dtype=np.int64), 1
    n_slots = int(np.ceil(24 / interval))
    minutes = np.asarray(time_index.hour) * 60 + np.asarray(time_index.minute)
    return (minutes // (interval * 60)).astype(np.int64), n_slots


def target_steps(split, horizon: int, segment: str = "test") -> np.ndarray:
    return np.array([t for t in split.segment(segment) if t >= horizon], dtype=np.int64)


def ha_fit_predict(cube, split, horizon: int = 0, segment: str = "test") -> tuple[np.ndarray, np.ndarray]:
    """Slot-of-day mean over the training range, per tract.

    Returns ``(steps, predictions)`` with predictions of shape (len(steps), N).
    Slots never seen in training fall back to the tract's overall train mean.
    """
    slots, n_slots = time_slots(cube.time_index, cube.interval)
    train = np.arange(split.train.start, split.train.stop)
    if train.size == 0:
        raise BaselineError("empty training range")
    counts = cube.counts.astype(float)
    tract_mean = counts[train].mean(axis=0)
    table = np.tile(tract_mean, (n_slots, 1))
    for s in range(n_slots):
        rows = train[slots[train] == s]
        if rows.size:
            table[s] = counts[rows].mean(axis=0)
        else:
            logger.info("HA: slot %d has no training rows; using tract means", s)
    steps = target_steps(split, horizon, segment)
    return steps, table[slots[steps]]


def lagged_design(series: np.ndarray, steps: np.ndarray, lags: int) -> np.ndarray:
    return series[steps[:, None] - lags + np.arange(lags)[None, :]]


def rf_fit_predict(cube, split, lags: int = 12, seed: int = 0, n_estimators: int = 100,
                   segment: str = "test") -> tuple[np.ndarray, np.ndarray]:
    """One random forest per tract on its own previous ``lags`` counts."""
    train_steps = np.arange(max(split.train.start, lags), split.train.stop)
    if train_steps.size < 1:
        raise BaselineError(f"training range too short for {lags} lags")
    steps = target_steps(split, lags, segment)
    counts = cube.counts.astype(float)
    preds = np.zeros((steps.size, cube.N))
    for n in range(cube.N):
        series = counts[:, n]
        y = series[train_steps]
        if np.all(y == y[0]):
            preds[:, n] = y[0]
            continue
        rf = RandomForestRegressor(n_estimators=n_estimators, max_depth=None, random_state=seed, n_jobs=1)
        rf.fit(lagged_design(series, train_steps, lags), y)
        preds[:, n] = rf.predict(lagged_design(series, steps, lags))
    return steps, preds
