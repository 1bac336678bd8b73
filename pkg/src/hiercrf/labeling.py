"""Binary anomaly labels via a strict IQR fence, plus the train/test split.

Quartiles use linear interpolation between order statistics and are computed
on the full series (labels exist before the split; the mild leakage this
implies is accepted and documented in the README). The default multiplier is
the far-out fence k=3, much stricter than the usual 1.5, so only extreme
points are flagged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import TooShort
from .series import ANOMALY, NORMAL, DataSourceGroup, LabeledDataset, MetricSeries

MIN_POINTS = 4


@dataclass(frozen=True)
class LabelingConfig:
    iqr_multiplier: float = 3.0
    split_ratio: float = 0.45

    def __post_init__(self) -> None:
        if not self.iqr_multiplier > 0:
            raise ValueError("iqr_multiplier must be positive")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must be in (0, 1)")


def iqr_fences(values: np.ndarray, k: float) -> tuple[float, float]:
    """Return (lower, upper) = (Q1 - k*IQR, Q3 + k*IQR)."""
    q1, q3 = np.quantile(values, [0.25, 0.75])  # linear interpolation
    iqr = q3 - q1
    return float(q1 - k * iqr), float(q3 + k * iqr)


def iqr_label(series: MetricSeries, cfg: LabelingConfig) -> np.ndarray:
    """Label points strictly outside the IQR fences as anomalies.

    A constant series has IQR 0 and both fences at Q1 = Q3, so nothing is
    flagged (comparisons are strict).
    """
    n = len(series)
    if n < MIN_POINTS:
        raise TooShort(n, MIN_POINTS)
    lo, hi = iqr_fences(series.values, cfg.iqr_multiplier)
    labels = np.where((series.values < lo) | (series.values > hi), ANOMALY, NORMAL)
    return labels.astype(np.int8)


def label_group(group: DataSourceGroup, cfg: LabelingConfig) -> np.ndarray:
    """Source-level labels: pointwise OR of the per-metric IQR labels."""
    out = np.zeros(len(group), dtype=np.int8)
    for s in group.series:
        out |= iqr_label(s, cfg)
    return out


def label_dataset(groups, cfg: LabelingConfig) -> LabeledDataset:
    labels = {g.source_id: label_group(g, cfg) for g in groups}
    return LabeledDataset(tuple(groups), labels)


def split_point(n: int, ratio: float) -> int:
    """First test index for a series of length n: floor(ratio * n)."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")
    return int(math.floor(ratio * n))


def split(dataset: LabeledDataset, ratio: float) -> LabeledDataset:
    """Assign contiguous train/test splits to every source.

    The train prefix may come out empty for very short series (floor
    semantics); downstream stages raise EmptyTrain if they need one.
    """
    idx = {g.source_id: split_point(len(g), ratio) for g in dataset.groups}
    return replace(dataset, split_index=idx)


def anomaly_fraction(labels: np.ndarray) -> float:
    return float(np.mean(labels == ANOMALY))


def tune_multiplier(
    series: MetricSeries,
    target_fraction: float,
    candidates: tuple[float, ...] = (1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 8.0),
) -> float:
    """Pick the fence multiplier whose anomaly fraction is closest to target."""
    best_k, best_err = candidates[0], math.inf
    for k in candidates:
        frac = anomaly_fraction(iqr_label(series, LabelingConfig(iqr_multiplier=k)))
        err = abs(frac - target_fraction)
        if err < best_err:
            best_k, best_err = k, err
    return best_k
