"""Uncertainty summaries of predicted variance maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class UncertaintyMetric:
    """Summed per-frame pixel variance, averaged over time and test set."""

    per_frame: np.ndarray     # (T,) mean over sequences of per-frame sums
    per_sequence: np.ndarray  # (B,) mean over frames of per-frame sums
    average: float


def uncertainty_metric(pred_var: np.ndarray) -> UncertaintyMetric:
    """pred_var: (batch, time, pixels) predicted variances, all >= 0."""
    v = np.asarray(pred_var, dtype=np.float64)
    if v.ndim != 3:
        raise ShapeError(f"expected (batch, time, pixels), got {v.shape}")
    sums = v.sum(axis=2)
    return UncertaintyMetric(
        per_frame=sums.mean(axis=0),
        per_sequence=sums.mean(axis=1),
        average=float(sums.mean()),
    )


def strictly_increasing(values) -> bool:
    a = np.asarray(values, dtype=np.float64)
    return bool(np.all(np.diff(a) > 0))
