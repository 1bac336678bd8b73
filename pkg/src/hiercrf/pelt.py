"""Penalized changepoint detection with candidate pruning.

Segments are scored by the squared-error change-in-mean cost, computed in
O(1) per segment from prefix sums of the values and their squares. The
detector minimizes sum over segments of cost(segment) + beta via the
optimal-partitioning recursion

    F(t) = min over admissible tau of F(tau) + C(tau+1..t) + beta

and prunes candidate tau once F(tau) + C(tau+1..t) + prune_constant >= F(t).
Because the squared-error cost is subadditive, a pruned tau is dominated by
t itself at every horizon where t is an admissible split, i.e. from
t + min_segment_length onwards. Pruned candidates are therefore retired with
that delay rather than immediately; with a minimum segment length above one
an immediate drop could discard a candidate that is still the only legal
split for the next few positions. This keeps the pruned search exactly
equivalent to the unpruned recursion.

The series is standardized (zero mean, unit variance) before segmentation by
default, which makes the "bic" penalty 2*ln(n) scale-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import TooShort
from .series import ANOMALY, NORMAL, MetricSeries


@dataclass(frozen=True)
class PeltConfig:
    penalty: Union[float, str] = "bic"  # numeric beta, or "bic" = 2*ln(n)
    min_segment_length: int = 2
    prune_constant: float = 0.0
    standardize: bool = True

    def __post_init__(self) -> None:
        if isinstance(self.penalty, str):
            if self.penalty != "bic":
                raise ValueError(f"unknown penalty rule {self.penalty!r}")
        elif not self.penalty > 0:
            raise ValueError("numeric penalty must be positive")
        if self.min_segment_length < 1:
            raise ValueError("min_segment_length must be >= 1")

    def resolve_penalty(self, n: int) -> float:
        if isinstance(self.penalty, str):
            return 2.0 * math.log(n)
        return float(self.penalty)


@dataclass(frozen=True)
class ChangepointResult:
    """Changepoints as the last index of every segment except the final one."""

    changepoints: tuple[int, ...]
    objective: float
    penalty: float

    @property
    def n_segments(self) -> int:
        return len(self.changepoints) + 1


class SegmentCost:
    """O(1) squared-error cost over inclusive index ranges, via prefix sums."""

    def __init__(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        self.n = len(values)
        self._s1 = np.concatenate(([0.0], np.cumsum(values)))
        self._s2 = np.concatenate(([0.0], np.cumsum(values * values)))

    def __call__(self, a: int, b: int) -> float:
        """Cost of values[a..b] inclusive: sum of squared deviations from the mean."""
        if a > b:
            raise ValueError("need a <= b")
        m = b - a + 1
        s1 = self._s1[b + 1] - self._s1[a]
        s2 = self._s2[b + 1] - self._s2[a]
        return max(s2 - s1 * s1 / m, 0.0)


def segment_cost(values, a: int, b: int) -> float:
    return SegmentCost(values)(a, b)


def standardize(values: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance transform; constant input maps to zeros."""
    values = np.asarray(values, dtype=np.float64)
    std = float(values.std())
    centered = values - values.mean()
    if std == 0.0:
        return centered
    return centered / std


def _as_values(series) -> np.ndarray:
    if isinstance(series, MetricSeries):
        return series.values
    return np.asarray(series, dtype=np.float64)


def detect(series, cfg: PeltConfig = PeltConfig()) -> ChangepointResult:
    """Pruned exact minimization of the penalized segmentation objective.

    Internally tau counts prefix lengths; the reported changepoints are
    0-based last-indices of segments, so a break between positions 49 and 50
    is reported as 49.
    """
    values = _as_values(series)
    n = len(values)
    L = cfg.min_segment_length
    if n < 2 * L:
        raise TooShort(n, 2 * L)
    if cfg.standardize:
        values = standardize(values)
    beta = cfg.resolve_penalty(n)
    cost = SegmentCost(values)
    kappa = cfg.prune_constant

    INF = math.inf
    F = np.full(n + 1, INF)
    F[0] = 0.0
    prev = np.full(n + 1, -1, dtype=np.int64)
    candidates: list[int] = []          # alive tau, increasing
    kill_at: dict[int, int] = {}        # tau -> first t at which it is retired
    for t in range(1, n + 1):
        newcomer = t - L
        if newcomer >= 0 and F[newcomer] < INF:
            candidates.append(newcomer)
        if kill_at:
            candidates = [tau for tau in candidates if kill_at.get(tau, n + 1) > t]
        best, best_tau = INF, -1
        for tau in candidates:
            total = F[tau] + cost(tau, t - 1) + beta
            if total < best:
                best, best_tau = total, tau
        if best_tau < 0:
            continue  # no admissible split yet (t < L)
        F[t] = best
        prev[t] = best_tau
        for tau in candidates:
            if tau not in kill_at and F[tau] + cost(tau, t - 1) + kappa >= F[t]:
                kill_at[tau] = t + L  # dominated by t, usable once t is admissible
    breaks: list[int] = []
    t = n
    while t > 0:
        tau = int(prev[t])
        if tau > 0:
            breaks.append(tau)
        t = tau
    breaks.reverse()
    return ChangepointResult(
        changepoints=tuple(b - 1 for b in breaks),
        objective=float(F[n]),
        penalty=beta,
    )


@dataclass(frozen=True)
class SingleChangepoint:
    index: int
    gain: float
    zero_gain: bool


def single_changepoint_estimate(
    values, min_segment_length: int = 2
) -> SingleChangepoint:
    """Most likely single change position under the Gaussian mean-shift model.

    Maximizes the likelihood-ratio gain of splitting versus not splitting,
    which for this cost is the squared-error reduction
    C(whole) - C(left) - C(right). The returned index is the last index of
    the left segment. Ties (within float noise) go to the smallest admissible
    index; an all-tied flat series is additionally flagged zero_gain.
    """
    vals = _as_values(values)
    n = len(vals)
    L = min_segment_length
    if n < 2 * L:
        raise TooShort(n, 2 * L)
    cost = SegmentCost(vals)
    whole = cost(0, n - 1)
    ts = np.arange(L - 1, n - L)
    gains = np.array([whole - cost(0, t) - cost(t + 1, n - 1) for t in ts])
    tol = 1e-9 * max(1.0, whole)
    best = float(gains.max())
    first = int(ts[np.argmax(gains >= best - tol)])
    return SingleChangepoint(index=first, gain=best, zero_gain=best <= tol)


def changepoints_to_labels(
    result: ChangepointResult, n: int, window: int = 0
) -> np.ndarray:
    """Mark positions within +-window of each changepoint as anomalies."""
    labels = np.full(n, NORMAL, dtype=np.int8)
    for cp in result.changepoints:
        lo = max(cp - window, 0)
        hi = min(cp + window, n - 1)
        labels[lo : hi + 1] = ANOMALY
    return labels
