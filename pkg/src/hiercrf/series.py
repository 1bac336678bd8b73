"""Time-series data model and CSV ingestion.

Two on-disk layouts are supported:

* narrow files with a ``timestamp,value`` header, one metric per file
  (the layout used by public server-metric benchmarks);
* wide files with a ``timestamp,<host>:<metric>,...`` header carrying many
  hosts and metrics on one shared grid.

Timestamps are ISO-8601 ``YYYY-MM-DD HH:MM:SS`` on disk and integer epoch
seconds in memory, so comparisons and alignment are exact. Empty cells are
missing values; they survive ingestion as NaN and are removed by
:func:`fill_missing` before modeling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    AllMissing,
    EmptyFile,
    EmptyIntersection,
    MalformedHeader,
    MalformedRow,
    NonMonotoneTimestamp,
)

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"

NORMAL = 0
ANOMALY = 1


def parse_timestamp(text: str) -> int:
    """Parse an ISO-8601 ``YYYY-MM-DD HH:MM:SS`` timestamp to epoch seconds."""
    dt = datetime.strptime(text.strip(), TIMESTAMP_FORMAT)
    return int(dt.replace(tzinfo=timezone.utc).timestamp())


def format_timestamp(epoch: int) -> str:
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime(TIMESTAMP_FORMAT)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MetricSeries:
    """One metric of one data source: values on a strictly increasing grid."""

    source_id: str
    metric_name: str
    timestamps: np.ndarray  # int64 epoch seconds, strictly increasing
    values: np.ndarray      # float64; NaN = missing until fill_missing

    def __post_init__(self) -> None:
        ts = _frozen(np.asarray(self.timestamps, dtype=np.int64))
        vals = _frozen(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        if ts.shape != vals.shape or ts.ndim != 1:
            raise ValueError("timestamps and values must be 1-d and equal length")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps)

    def with_values(self, values: np.ndarray) -> "MetricSeries":
        return MetricSeries(self.source_id, self.metric_name, self.timestamps, values)

    def restrict(self, mask: np.ndarray) -> "MetricSeries":
        return MetricSeries(
            self.source_id, self.metric_name, self.timestamps[mask], self.values[mask]
        )


@dataclass(frozen=True)
class DataSourceGroup:
    """All metric series of one source, sharing one timestamp grid."""

    source_id: str
    series: tuple[MetricSeries, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "series", tuple(self.series))
        if not self.series:
            raise ValueError(f"group {self.source_id!r} has no series")
        grid = self.series[0].timestamps
        for s in self.series[1:]:
            if not np.array_equal(s.timestamps, grid):
                raise ValueError(
                    f"group {self.source_id!r}: series {s.metric_name!r} is off the shared grid"
                )

    @property
    def timestamps(self) -> np.ndarray:
        return self.series[0].timestamps

    def __len__(self) -> int:
        return len(self.series[0])

    @property
    def metric_names(self) -> tuple[str, ...]:
        return tuple(s.metric_name for s in self.series)

    def series_by_metric(self, name: str) -> MetricSeries:
        for s in self.series:
            if s.metric_name == name:
                return s
        raise KeyError(name)

    def slice(self, start: int, stop: int) -> "DataSourceGroup":
        return DataSourceGroup(
            self.source_id,
            tuple(
                MetricSeries(s.source_id, s.metric_name, s.timestamps[start:stop], s.values[start:stop])
                for s in self.series
            ),
        )


@dataclass(frozen=True)
class LabeledDataset:
    """Aligned multi-source series plus binary labels and a train/test split.

    ``labels[source_id]`` holds one 0/1 entry per grid position of that
    source's group. ``split_index[source_id]`` is the first test index; the
    train prefix is ``[0, split)`` and the test suffix ``[split, n)``.
    """

    groups: tuple[DataSourceGroup, ...]
    labels: Mapping[str, np.ndarray]
    split_index: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", tuple(self.groups))
        by_id = {g.source_id: g for g in self.groups}
        for sid, lab in self.labels.items():
            if sid not in by_id:
                raise ValueError(f"labels reference unknown source {sid!r}")
            if len(lab) != len(by_id[sid]):
                raise ValueError(f"labels for {sid!r} do not cover its grid")
        for sid, idx in self.split_index.items():
            n = len(by_id[sid])
            if not 0 <= idx <= n:
                raise ValueError(f"split index {idx} out of range for {sid!r}")

    def group(self, source_id: str) -> DataSourceGroup:
        for g in self.groups:
            if g.source_id == source_id:
                return g
        raise KeyError(source_id)

    @property
    def source_ids(self) -> tuple[str, ...]:
        return tuple(g.source_id for g in self.groups)


# --- narrow (timestamp,value) files -----------------------------------------


def ingest_nab_csv(
    path: str | Path,
    source_id: str | None = None,
    metric_name: str = "value",
) -> MetricSeries:
    """Read a ``timestamp,value`` CSV into a MetricSeries.

    Rows are kept in file order; an empty value cell becomes NaN. Raises
    NonMonotoneTimestamp if a timestamp repeats or goes backwards, and
    MalformedRow for rows that do not parse.
    """
    path = Path(path)
    sid = source_id if source_id is not None else path.stem
    timestamps: list[int] = []
    values: list[float] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(str(path))
        if [c.strip().lower() for c in header[:2]] != ["timestamp", "value"]:
            raise MalformedHeader(",".join(header), "expected 'timestamp,value'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise MalformedRow(lineno, f"expected 2 fields, got {len(row)}")
            try:
                ts = parse_timestamp(row[0])
            except ValueError as exc:
                raise MalformedRow(lineno, str(exc)) from exc
            cell = row[1].strip()
            if cell == "":
                val = math.nan
            else:
                try:
                    val = float(cell)
                except ValueError as exc:
                    raise MalformedRow(lineno, f"bad value {cell!r}") from exc
            if timestamps and ts <= timestamps[-1]:
                raise NonMonotoneTimestamp(lineno)
            timestamps.append(ts)
            values.append(val)
    if not timestamps:
        raise EmptyFile(str(path))
    return MetricSeries(sid, metric_name, np.array(timestamps, dtype=np.int64),
                        np.array(values, dtype=np.float64))


def write_nab_csv(series: MetricSeries, path: str | Path) -> None:
    """Write a MetricSeries back to the ``timestamp,value`` layout."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value"])
        for ts, val in zip(series.timestamps, series.values):
            cell = "" if math.isnan(val) else repr(float(val))
            writer.writerow([format_timestamp(int(ts)), cell])


# --- wide (timestamp,host:metric,...) files ----------------------------------


def ingest_wide_csv(path: str | Path) -> list[DataSourceGroup]:
    """Read a wide multi-host CSV into one DataSourceGroup per host.

    Column headers after the timestamp must follow ``<host>:<metric>``; the
    metric part may itself contain further structure (e.g. a ``@db`` suffix
    used by the dependency-graph miner). Hosts appear in first-seen column
    order, metrics in file order within a host.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(str(path))
        if not header or header[0].strip().lower() != "timestamp":
            raise MalformedHeader(header[0] if header else "", "first column must be 'timestamp'")
        columns: list[tuple[str, str]] = []
        for col in header[1:]:
            if ":" not in col:
                raise MalformedHeader(col, "expected '<host>:<metric>'")
            host, metric = col.split(":", 1)
            if not host or not metric:
                raise MalformedHeader(col, "empty host or metric part")
            columns.append((host, metric))
        timestamps: list[int] = []
        data: list[list[float]] = [[] for _ in columns]
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(columns) + 1:
                raise MalformedRow(lineno, f"expected {len(columns) + 1} fields, got {len(row)}")
            try:
                ts = parse_timestamp(row[0])
            except ValueError as exc:
                raise MalformedRow(lineno, str(exc)) from exc
            if timestamps and ts <= timestamps[-1]:
                raise NonMonotoneTimestamp(lineno)
            timestamps.append(ts)
            for j, cell in enumerate(row[1:]):
                cell = cell.strip()
                if cell == "":
                    data[j].append(math.nan)
                else:
                    try:
                        data[j].append(float(cell))
                    except ValueError as exc:
                        raise MalformedRow(lineno, f"bad value {cell!r}") from exc
    if not timestamps:
        raise EmptyFile(str(path))
    ts_arr = np.array(timestamps, dtype=np.int64)
    hosts: list[str] = []
    per_host: dict[str, list[MetricSeries]] = {}
    for (host, metric), col in zip(columns, data):
        if host not in per_host:
            per_host[host] = []
            hosts.append(host)
        per_host[host].append(
            MetricSeries(host, metric, ts_arr, np.array(col, dtype=np.float64))
        )
    return [DataSourceGroup(h, tuple(per_host[h])) for h in hosts]


def write_wide_csv(groups: Sequence[DataSourceGroup], path: str | Path) -> None:
    grid = groups[0].timestamps
    for g in groups[1:]:
        if not np.array_equal(g.timestamps, grid):
            raise ValueError("groups must share one grid to be written wide")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["timestamp"]
        cols: list[MetricSeries] = []
        for g in groups:
            for s in g.series:
                header.append(f"{g.source_id}:{s.metric_name}")
                cols.append(s)
        writer.writerow(header)
        for i, ts in enumerate(grid):
            row = [format_timestamp(int(ts))]
            for s in cols:
                v = s.values[i]
                row.append("" if math.isnan(v) else repr(float(v)))
            writer.writerow(row)


# --- label files ---------------------------------------------------------------


def ingest_label_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``timestamp,label`` CSV; labels must be 0 or 1."""
    path = Path(path)
    timestamps: list[int] = []
    labels: list[int] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(str(path))
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise MalformedRow(lineno, f"expected 2 fields, got {len(row)}")
            try:
                ts = parse_timestamp(row[0])
                lab = int(row[1])
            except ValueError as exc:
                raise MalformedRow(lineno, str(exc)) from exc
            if lab not in (NORMAL, ANOMALY):
                raise MalformedRow(lineno, f"label must be 0 or 1, got {row[1]!r}")
            if timestamps and ts <= timestamps[-1]:
                raise NonMonotoneTimestamp(lineno)
            timestamps.append(ts)
            labels.append(lab)
    if not timestamps:
        raise EmptyFile(str(path))
    return np.array(timestamps, dtype=np.int64), np.array(labels, dtype=np.int8)


def write_label_csv(timestamps: np.ndarray, labels: np.ndarray, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "label"])
        for ts, lab in zip(timestamps, labels):
            writer.writerow([format_timestamp(int(ts)), int(lab)])


# --- post-processing -------------------------------------------------------------


def fill_missing(series: MetricSeries) -> MetricSeries:
    """Forward-fill missing values; leading missing rows are dropped.

    Non-missing values are never touched. Raises AllMissing when no value is
    observed at all.
    """
    values = series.values
    finite = ~np.isnan(values)
    if not finite.any():
        raise AllMissing(f"{series.source_id}/{series.metric_name}")
    first = int(np.argmax(finite))
    ts = series.timestamps[first:]
    vals = values[first:].copy()
    # forward fill: carry the last observed index forward
    idx = np.arange(len(vals))
    observed = ~np.isnan(vals)
    carried = np.maximum.accumulate(np.where(observed, idx, 0))
    vals = vals[carried]
    return MetricSeries(series.source_id, series.metric_name, ts, vals)


def fill_group(group: DataSourceGroup) -> DataSourceGroup:
    """fill_missing per series, then restrict the group to the common grid."""
    filled = [fill_missing(s) for s in group.series]
    grid = filled[0].timestamps
    for s in filled[1:]:
        grid = np.intersect1d(grid, s.timestamps, assume_unique=True)
    if len(grid) == 0:
        raise EmptyIntersection(group.source_id)
    out = []
    for s in filled:
        mask = np.isin(s.timestamps, grid, assume_unique=True)
        out.append(s.restrict(mask))
    return DataSourceGroup(group.source_id, tuple(out))


def align(groups: Sequence[DataSourceGroup]) -> list[DataSourceGroup]:
    """Restrict all groups to the intersection of their timestamp grids.

    Order within each series is preserved (grids are increasing, so the
    intersection is too). Raises EmptyIntersection when no instant is shared.
    """
    if not groups:
        raise ValueError("align requires at least one group")
    grid = groups[0].timestamps
    for g in groups[1:]:
        grid = np.intersect1d(grid, g.timestamps, assume_unique=True)
    if len(grid) == 0:
        raise EmptyIntersection("no shared timestamps across groups")
    out = []
    for g in groups:
        mask = np.isin(g.timestamps, grid, assume_unique=True)
        out.append(DataSourceGroup(g.source_id, tuple(s.restrict(mask) for s in g.series)))
    return out
