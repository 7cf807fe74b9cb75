"""Evaluation metrics over (time x tract) arrays of ground truth and predictions.

Every function takes arrays shaped (T, N); a cell is one tract at one step.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

KL_EPS = 2.2e-16
DOWNTOWN_SIZE = 5


class MetricError(ValueError):
    pass


def downtown_tracts(tracts, k: int = DOWNTOWN_SIZE) -> list:
    """The ``k`` most populated tract ids (ties broken by tract_id)."""
    ranked = sorted(tracts, key=lambda t: (-t.population, t.tract_id))
    return [t.tract_id for t in ranked[:k]]


def mae(y, y_hat, columns=None) -> float:
    y, y_hat = np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)
    if columns is not None:
        columns = list(columns)
        if not columns:
            raise MetricError("empty tract subset")
        y, y_hat = y[..., columns], y_hat[..., columns]
    if y.size == 0:
        raise MetricError("no cells to evaluate")
    return float(np.mean(np.abs(y - y_hat)))


def mape_per_tract(y, y_hat) -> np.ndarray:
    """Per-column mean of |y - y_hat| / max(y, 1), in percent."""
    y, y_hat = np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)
    return np.mean(np.abs(y - y_hat) / np.maximum(y, 1.0), axis=0) * 100.0


def kl_div(y, y_hat, eps: float = KL_EPS) -> float:
    """Mean over cells of y * log((y + eps) / (y_hat + eps)).

    Negative point predictions are clipped to zero first.
    """
    y = np.asarray(y, dtype=float)
    y_hat = np.clip(np.asarray(y_hat, dtype=float), 0.0, None)
    terms = np.where(y > 0, y * (np.log(y + eps) - np.log(y_hat + eps)), 0.0)
    return float(np.mean(terms))


def _check_interval(lo, hi):
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise MetricError("lower quantile exceeds upper quantile")
    return lo, hi


def mpiw(lo, hi) -> float:
    lo, hi = _check_interval(lo, hi)
    return float(np.mean(hi - lo))


def picp(y, lo, hi) -> float:
    """Fraction of ground-truth cells inside the predicted [lo, hi] interval."""
    lo, hi = _check_interval(lo, hi)
    y = np.asarray(y, dtype=float)
    return float(np.mean((y >= lo) & (y <= hi)))


def round_counts(y_hat) -> np.ndarray:
    """Nearest non-negative integer, halves rounded up."""
    return np.floor(np.clip(np.asarray(y_hat, dtype=float), 0.0, None) + 0.5)


def true_zero_rate(y, y_hat) -> Optional[float]:
    """Share of zero-valued cells whose rounded prediction is also zero; None without zeros."""
    y = np.asarray(y, dtype=float)
    zeros = y == 0
    if not zeros.any():
        return None
    return float(np.mean(round_counts(y_hat)[zeros] == 0))


def f1(y, y_hat, average: str = "micro") -> float:
    """F1 over integer count classes after rounding predictions.

    With one label per cell, micro-F1 equals the share of exact matches.
    """
    y = np.asarray(y, dtype=float).ravel()
    r = round_counts(y_hat).ravel()
    if average == "micro":
        return float(np.mean(y == r))
    if average != "macro":
        raise MetricError(f"unknown F1 average {average!r}")
    scores = []
    for c in np.union1d(y, r):
        tp = np.sum((y == c) & (r == c))
        fp = np.sum((y != c) & (r == c))
        fn = np.sum((y == c) & (r != c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


@dataclass
class MetricsReport:
    mae_tract: Optional[float]
    mae_downtown: Optional[float]
    mape_per_tract: dict
    kl_div: Optional[float]
    mpiw: Optional[float]
    picp: Optional[float]
    true_zero_rate: Optional[float]
    f1: Optional[float]
    metadata: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def null(cls, tract_ids, **metadata) -> "MetricsReport":
        """Report for a run that did not converge: every metric is null."""
        return cls(None, None, {t: None for t in tract_ids}, None, None, None, None, None, dict(metadata))


def evaluate(y, y_hat, tract_ids, downtown=None, q_lo=None, q_hi=None, f1_average: str = "micro",
             **metadata) -> MetricsReport:
    """Full metric suite; interval metrics only when both quantile arrays are given."""
    tract_ids = list(tract_ids)
    y, y_hat = np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape or y.shape[-1] != len(tract_ids):
        raise MetricError(f"shape mismatch: y {y.shape}, y_hat {y_hat.shape}, {len(tract_ids)} tracts")
    cols = None
    if downtown is not None:
        pos = {t: i for i, t in enumerate(tract_ids)}
        cols = [pos[t] for t in downtown]
    has_interval = q_lo is not None and q_hi is not None
    return MetricsReport(
        mae_tract=mae(y, y_hat),
        mae_downtown=mae(y, y_hat, cols) if cols is not None else None,
        mape_per_tract=dict(zip(tract_ids, mape_per_tract(y, y_hat).tolist())),
        kl_div=kl_div(y, y_hat),
        mpiw=mpiw(q_lo, q_hi) if has_interval else None,
        picp=picp(y, q_lo, q_hi) if has_interval else None,
        true_zero_rate=true_zero_rate(y, y_hat),
        f1=f1(y, y_hat, f1_average),
        metadata=dict(metadata),
    )


def _pivot(df: pd.DataFrame, column: str, tract_ids: list) -> np.ndarray:
    wide = df.pivot(index="timestamp", columns="tract_id", values=column)
    return wide.sort_index()[tract_ids].to_numpy(dtype=float)


def report_from_dumps(predictions_csv, distribution_csv=None, downtown=None, f1_average: str = "micro",
                      **metadata) -> MetricsReport:
    """Metric suite straight from the exported prediction (and distribution) CSVs."""
    pred = pd.read_csv(predictions_csv, dtype={"tract_id": str}, float_precision="round_trip")
    ids = list(dict.fromkeys(pred["tract_id"]))
    lo = hi = None
    if distribution_csv is not None:
        dist = pd.read_csv(distribution_csv, dtype={"tract_id": str}, float_precision="round_trip")
        lo, hi = _pivot(dist, "q_lo", ids), _pivot(dist, "q_hi", ids)
    return evaluate(_pivot(pred, "y", ids), _pivot(pred, "y_hat", ids), ids, downtown, lo, hi, f1_average,
                    **metadata)
