"""Chronological train/validation/test segmentation and z-score normalizers."""

import math
from dataclasses import dataclass

import numpy as np

ORDERS = {
    "train-val-test": ("train", "validation", "test"),
    "train-test-val": ("train", "test", "validation"),
}


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class ZScore:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, axis=None) -> "ZScore":
        x = np.asarray(x, dtype=float)
        mean = np.mean(x, axis=axis)
        std = np.std(x, axis=axis)
        std = np.where(std > 0, std, 1.0)
        return cls(np.asarray(mean, dtype=float), np.asarray(std, dtype=float))

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean

    def as_dict(self) -> dict:
        return {"mean": np.atleast_1d(self.mean).tolist(), "std": np.atleast_1d(self.std).tolist()}


@dataclass(frozen=True)
class DatasetSplit:
    train: range
    validation: range
    test: range
    normalizer: ZScore
    order: str = "train-val-test"

    def segment(self, name: str) -> range:
        return getattr(self, name)


def split_sizes(T: int, ratios=(0.7, 0.2, 0.1)) -> tuple[int, int, int]:
    """Floor each share of ``T``, then hand leftover steps to the largest remainders.

    Ties go to the earlier entry of ``ratios``.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise SplitError(f"ratios must be three non-negative shares summing to 1, got {ratios}")
    raw = [T * r for r in ratios]
    sizes = [math.floor(x + 1e-9) for x in raw]
    rest = T - sum(sizes)
    order = sorted(range(3), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return tuple(sizes)


def chronological_split(cube, ratios=(0.7, 0.2, 0.1), horizon: int = 12,
                        order: str = "train-val-test") -> DatasetSplit:
    """Split the time axis into contiguous segments.

    ``ratios`` are always (train, validation, test); ``order`` decides whether
    validation or test follows the training block. The count normalizer is
    fit on the training rows only.
    """
    T = cube.T if hasattr(cube, "T") else int(cube)
    if T < horizon + 1:
        raise SplitError(f"series of length {T} is too short for an input horizon of {horizon}")
    if order not in ORDERS:
        raise SplitError(f"unknown split order {order!r}; choose from {sorted(ORDERS)}")
    sizes = dict(zip(("train", "validation", "test"), split_sizes(T, ratios)))
    ranges = {}
    pos = 0
    for name in ORDERS[order]:
        ranges[name] = range(pos, pos + sizes[name])
        pos += sizes[name]
    if len(ranges["train"]) <= horizon:
        raise SplitError(f"training segment of {len(ranges['train'])} steps cannot hold one window of {horizon}")
    counts = getattr(cube, "counts", None)
    normalizer = ZScore.fit(counts[ranges["train"].start:ranges["train"].stop]) if counts is not None \
        else ZScore(np.array(0.0), np.array(1.0))
    return DatasetSplit(ranges["train"], ranges["validation"], ranges["test"], normalizer, order)
