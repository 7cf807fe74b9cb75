import numpy as np
import pandas as pd
import pytest

from urbanfusion.baselines import BaselineError, ha_fit_predict, rf_fit_predict, time_slots
from urbanfusion.data.events import ObservationCube
from urbanfusion.data.split import chronological_split


def make_cube(counts, interval=1, start="2020-01-01"):
    counts = np.asarray(counts)
    idx = pd.date_range(start, periods=counts.shape[0], freq=f"{interval}h")
    return ObservationCube(idx, [f"t{i}" for i in range(counts.shape[1])], counts, interval)


def test_slot_counts():
    idx = pd.date_range("2020-01-01", periods=48, freq="4h")
    slots, n = time_slots(idx, 4)
    assert n == 6 and set(slots) == set(range(6))
    assert time_slots(idx, 1)[1] == 24
    assert time_slots(idx, 24)[1] == 1


def test_ha_mean_of_slot():
    counts = np.zeros((48, 1), dtype=int)
    counts[9, 0], counts[33, 0] = 1, 3  # both 09:00
    cube = make_cube(counts)
    split = chronological_split(cube, (0.5, 0.25, 0.25), horizon=1)
    split = type(split)(range(0, 48), range(0, 0), range(0, 48), split.normalizer)
    steps, pred = ha_fit_predict(cube, split)
    assert pred[list(steps).index(9), 0] == 2.0
    assert pred[list(steps).index(10), 0] == 0.0


def test_ha_constant_series():
    cube = make_cube(np.full((100, 3), 7))
    steps, pred = ha_fit_predict(cube, chronological_split(cube, horizon=12))
    assert np.all(pred == 7)


def test_ha_daily_single_slot(rng):
    cube = make_cube(rng.poisson(4, (60, 2)), interval=24)
    split = chronological_split(cube, horizon=5)
    _, pred = ha_fit_predict(cube, split)
    np.testing.assert_allclose(pred, np.tile(cube.counts[split.train.start:split.train.stop].mean(axis=0),
                                             (pred.shape[0], 1)))


def test_ha_in_sample_beats_global_mean(rng):
    t = np.arange(24 * 20)
    counts = rng.poisson(5 + 4 * np.sin(2 * np.pi * t / 24)[:, None], (t.size, 4))
    cube = make_cube(counts)
    split = chronological_split(cube, horizon=12)
    steps, pred = ha_fit_predict(cube, split, segment="train")
    y = cube.counts[steps]
    global_mean = cube.counts[split.train.start:split.train.stop].mean(axis=0)
    assert np.abs(y - pred).mean() <= np.abs(y - global_mean).mean()


def test_ha_permutation_invariant(rng):
    counts = rng.poisson(3, (200, 5))
    perm = rng.permutation(5)
    cube, cube_p = make_cube(counts), make_cube(counts[:, perm])
    _, a = ha_fit_predict(cube, chronological_split(cube))
    _, b = ha_fit_predict(cube_p, chronological_split(cube_p))
    np.testing.assert_array_equal(a[:, perm], b)


def test_rf_learns_periodic_series():
    t = np.arange(400)
    series = np.array([0, 3, 7, 2, 9, 4])[t % 6]
    cube = make_cube(np.column_stack([series, series[::-1]]))
    split = chronological_split(cube, horizon=12)
    steps, pred = rf_fit_predict(cube, split, lags=12, n_estimators=20)
    train_std = cube.counts[split.train.start:split.train.stop].std()
    assert np.abs(pred - cube.counts[steps]).mean() < train_std / 10


def test_rf_all_zero_series():
    cube = make_cube(np.zeros((100, 2), dtype=int))
    _, pred = rf_fit_predict(cube, chronological_split(cube), n_estimators=5)
    assert np.all(pred == 0)


def test_rf_deterministic(rng):
    cube = make_cube(rng.poisson(3, (150, 2)))
    split = chronological_split(cube)
    a = rf_fit_predict(cube, split, seed=4, n_estimators=10)[1]
    b = rf_fit_predict(cube, split, seed=4, n_estimators=10)[1]
    np.testing.assert_array_equal(a, b)


def test_rf_insufficient_history(rng):
    cube = make_cube(rng.poisson(3, (40, 2)))
    split = chronological_split(cube, horizon=12)
    with pytest.raises(BaselineError):
        rf_fit_predict(cube, split, lags=40)
