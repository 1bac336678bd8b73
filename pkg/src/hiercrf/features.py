"""Binary indicator features for the chain model.

Continuous metrics are discretized into per-metric quantile bins (edges are
fitted on the train portion only) and complemented by the sign of the step
from the previous observation. Both indicator families are emitted for the
current position and for a configurable set of lags, so the model sees the
shape of the run-up, not just the current level. A second constructor bolts
per-source local-model outputs onto an existing sequence for the late-fusion
global stage.

Feature id layout, fixed by the template (M metrics in sorted name order,
L lags ascending, B bins):

* bin features     id = (m*L + l)*B + bin            for id in [0, M*L*B)
* step-sign feats  id = M*L*B + (m*L + l)*3 + sign   sign: 0=up 1=down 2=flat
* enrichment ids appended after the base space, per source in given order:
  2 label indicators then ``confidence_bins`` confidence-bin indicators.

Bin membership counts distinct edges strictly below the value, so a constant
metric (all edges equal) maps everything to bin 0. Lagged indicators are
omitted near the sequence start rather than imputed; position t only carries
lag-l features with l <= t (and step signs additionally need t-l >= 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyTrain, LengthMismatch, MetricMismatch
from .series import DataSourceGroup

SIGN_UP, SIGN_DOWN, SIGN_FLAT = 0, 1, 2
_SIGNS = ("up", "down", "flat")


@dataclass(frozen=True)
class FeatureConfig:
    bins_per_metric: int = 10
    lags: tuple[int, ...] = (0, 1, 2)
    delta_epsilon: float = 1e-9
    confidence_bins: int = 4

    def __post_init__(self) -> None:
        object.__setattr__(self, "lags", tuple(sorted(self.lags)))
        if self.bins_per_metric < 1:
            raise ValueError("bins_per_metric must be >= 1")
        if 0 not in self.lags or any(l < 0 for l in self.lags):
            raise ValueError("lags must be nonnegative and include 0")
        if self.delta_epsilon < 0:
            raise ValueError("delta_epsilon must be >= 0")
        if self.confidence_bins < 1:
            raise ValueError("confidence_bins must be >= 1")


@dataclass(frozen=True)
class FeatureTemplate:
    metric_names: tuple[str, ...]               # sorted; fixes id order
    bin_edges: tuple[tuple[float, ...], ...]    # per metric, B-1 edges
    bins_per_metric: int
    lags: tuple[int, ...]
    delta_epsilon: float

    @property
    def n_metrics(self) -> int:
        return len(self.metric_names)

    @property
    def n_lags(self) -> int:
        return len(self.lags)

    @property
    def feature_count(self) -> int:
        slots = self.n_metrics * self.n_lags
        return slots * self.bins_per_metric + slots * 3

    def bin_feature_id(self, metric_idx: int, lag_idx: int, bin_idx: int) -> int:
        return (metric_idx * self.n_lags + lag_idx) * self.bins_per_metric + bin_idx

    def sign_feature_id(self, metric_idx: int, lag_idx: int, sign: int) -> int:
        base = self.n_metrics * self.n_lags * self.bins_per_metric
        return base + (metric_idx * self.n_lags + lag_idx) * 3 + sign

    def describe_feature(self, feature_id: int) -> str:
        slots = self.n_metrics * self.n_lags
        bins_total = slots * self.bins_per_metric
        if feature_id < bins_total:
            slot, b = divmod(feature_id, self.bins_per_metric)
            m, l = divmod(slot, self.n_lags)
            return f"{self.metric_names[m]}[lag {self.lags[l]}] in bin {b}"
        slot, s = divmod(feature_id - bins_total, 3)
        m, l = divmod(slot, self.n_lags)
        return f"{self.metric_names[m]}[lag {self.lags[l]}] step {_SIGNS[s]}"

    def to_dict(self) -> dict:
        return {
            "metric_names": list(self.metric_names),
            "bin_edges": [list(e) for e in self.bin_edges],
            "bins_per_metric": self.bins_per_metric,
            "lags": list(self.lags),
            "delta_epsilon": self.delta_epsilon,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureTemplate":
        return cls(
            metric_names=tuple(d["metric_names"]),
            bin_edges=tuple(tuple(float(x) for x in e) for e in d["bin_edges"]),
            bins_per_metric=int(d["bins_per_metric"]),
            lags=tuple(int(l) for l in d["lags"]),
            delta_epsilon=float(d["delta_epsilon"]),
        )


@dataclass(frozen=True)
class FeatureVectorSequence:
    """Sparse binary features: per position, the sorted set of active ids."""

    feature_count: int
    active: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "active", tuple(tuple(a) for a in self.active))

    def __len__(self) -> int:
        return len(self.active)

    def slice(self, start: int, stop: int) -> "FeatureVectorSequence":
        return FeatureVectorSequence(self.feature_count, self.active[start:stop])


def empty_features(length: int) -> FeatureVectorSequence:
    """A zero-width feature sequence, the base for enrichment-only models."""
    return FeatureVectorSequence(0, tuple(() for _ in range(length)))


def fit_template(train_group: DataSourceGroup, cfg: FeatureConfig) -> FeatureTemplate:
    """Fit per-metric quantile bin edges on a train-portion group.

    Edges are the i/B quantiles for i=1..B-1 under the linear-interpolation
    rule. Duplicate edges are kept in the template (the id space stays fixed)
    but deduplicated at binning time, so degenerate metrics collapse into
    bin 0 without shifting any ids.
    """
    if len(train_group) == 0:
        raise EmptyTrain(train_group.source_id)
    names = tuple(sorted(train_group.metric_names))
    bins = cfg.bins_per_metric
    qs = [i / bins for i in range(1, bins)]
    edges = []
    for name in names:
        values = train_group.series_by_metric(name).values
        edges.append(tuple(float(q) for q in np.quantile(values, qs)) if qs else ())
    return FeatureTemplate(
        metric_names=names,
        bin_edges=tuple(edges),
        bins_per_metric=bins,
        lags=cfg.lags,
        delta_epsilon=cfg.delta_epsilon,
    )


def assign_bin(value: float, edges: Sequence[float]) -> int:
    """Index the bin of ``value``: the count of distinct edges strictly below it."""
    uniq = np.unique(np.asarray(edges, dtype=np.float64))
    return int(np.searchsorted(uniq, value, side="left"))


def extract(group: DataSourceGroup, template: FeatureTemplate) -> FeatureVectorSequence:
    """Activate bin and step-sign indicators for every position and lag."""
    if tuple(sorted(group.metric_names)) != template.metric_names:
        raise MetricMismatch(
            f"group has {sorted(group.metric_names)}, template expects {list(template.metric_names)}"
        )
    T = len(group)
    eps = template.delta_epsilon
    # per metric: precomputed bins and step signs for each position
    bins_by_metric: list[np.ndarray] = []
    signs_by_metric: list[np.ndarray] = []
    for m_idx, name in enumerate(template.metric_names):
        values = group.series_by_metric(name).values
        uniq = np.unique(np.asarray(template.bin_edges[m_idx], dtype=np.float64))
        bins_by_metric.append(np.searchsorted(uniq, values, side="left"))
        diffs = np.diff(values)
        signs = np.full(T, -1, dtype=np.int8)  # position 0 has no step
        if T > 1:
            signs[1:] = np.where(
                np.abs(diffs) <= eps, SIGN_FLAT, np.where(diffs > 0, SIGN_UP, SIGN_DOWN)
            )
        signs_by_metric.append(signs)
    active: list[tuple[int, ...]] = []
    for t in range(T):
        ids: list[int] = []
        for m_idx in range(template.n_metrics):
            mbins = bins_by_metric[m_idx]
            msigns = signs_by_metric[m_idx]
            for l_idx, lag in enumerate(template.lags):
                pos = t - lag
                if pos < 0:
                    continue
                ids.append(template.bin_feature_id(m_idx, l_idx, int(mbins[pos])))
                if pos >= 1:
                    ids.append(template.sign_feature_id(m_idx, l_idx, int(msigns[pos])))
        active.append(tuple(sorted(ids)))
    return FeatureVectorSequence(template.feature_count, tuple(active))


# --- late-fusion enrichment ------------------------------------------------

_CONF_EDGES_CACHE: dict[int, np.ndarray] = {}


def confidence_bin(confidence: float, confidence_bins: int) -> int:
    """Bin a confidence in [0,1] into equal-width bins, upper bin closed."""
    edges = _CONF_EDGES_CACHE.get(confidence_bins)
    if edges is None:
        edges = np.array([i / confidence_bins for i in range(1, confidence_bins)])
        _CONF_EDGES_CACHE[confidence_bins] = edges
    return int(np.searchsorted(edges, confidence, side="right"))


def enrich_with_local_outputs(
    base: FeatureVectorSequence,
    local_outputs: Sequence[tuple[str, np.ndarray, np.ndarray]],
    confidence_bins: int = 4,
) -> FeatureVectorSequence:
    """Append per-source (predicted label, confidence bin) indicators.

    ``local_outputs`` is an ordered sequence of (source_id, labels,
    confidences); the order fixes the appended id blocks. Every position
    gains exactly two ids per source. Base features are preserved untouched.
    """
    T = len(base)
    width = 2 + confidence_bins
    for sid, labels, confs in local_outputs:
        if len(labels) != T or len(confs) != T:
            raise LengthMismatch(f"local outputs for {sid!r} do not span {T} positions")
    active = []
    for t in range(T):
        ids = list(base.active[t])
        for s_idx, (_, labels, confs) in enumerate(local_outputs):
            offset = base.feature_count + s_idx * width
            ids.append(offset + int(labels[t]))
            ids.append(offset + 2 + confidence_bin(float(confs[t]), confidence_bins))
        active.append(tuple(sorted(ids)))
    return FeatureVectorSequence(
        base.feature_count + len(local_outputs) * width, tuple(active)
    )
