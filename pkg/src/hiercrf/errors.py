"""Exception types shared across the toolkit.

Every error raised by hiercrf derives from :class:`HiercrfError`, so callers
(and the CLI) can catch one base class and still report a precise category.
"""

from __future__ import annotations


class HiercrfError(Exception):
    """Base class for all hiercrf errors."""


# --- ingestion -------------------------------------------------------------

class EmptyFile(HiercrfError):
    """CSV file has a header but no data rows (or is empty)."""


class MalformedRow(HiercrfError):
    def __init__(self, line: int, detail: str = "") -> None:
        self.line = line
        msg = f"malformed row at line {line}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class MalformedHeader(HiercrfError):
    def __init__(self, column: str, detail: str = "") -> None:
        self.column = column
        msg = f"malformed header column {column!r}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class NonMonotoneTimestamp(HiercrfError):
    def __init__(self, line: int) -> None:
        self.line = line
        super().__init__(f"timestamp at line {line} is not strictly increasing")


class AllMissing(HiercrfError):
    """Every value in the series is missing; nothing to fill."""


class EmptyIntersection(HiercrfError):
    """Timestamp grids of the groups share no common instant."""


# --- labeling / segmentation ------------------------------------------------

class TooShort(HiercrfError):
    def __init__(self, n: int, minimum: int) -> None:
        self.n = n
        self.minimum = minimum
        super().__init__(f"series of length {n} is shorter than required {minimum}")


# --- features / models -------------------------------------------------------

class EmptyTrain(HiercrfError):
    def __init__(self, what: str = "") -> None:
        super().__init__(f"empty training portion{': ' + what if what else ''}")


class MetricMismatch(HiercrfError):
    """Group metrics do not match the metrics the template was fitted on."""


class LengthMismatch(HiercrfError):
    """Sequence lengths disagree where equal lengths are required."""


class DegenerateLabels(HiercrfError):
    """Training labels contain only one class and strict mode is on."""


class DimensionMismatch(HiercrfError):
    """Vector dimensions disagree."""


class InfeasibleNu(HiercrfError):
    def __init__(self, nu: float, n: int) -> None:
        super().__init__(f"nu*n = {nu * n:.4g} < 1 (nu={nu}, n={n}); box constraint never binds")


class UnalignedSources(HiercrfError):
    """Cluster members share no common timestamps."""


class NoMatchingMetrics(HiercrfError):
    """No metric name matched the connection-metric patterns."""


# --- CLI ----------------------------------------------------------------------

class ConfigError(HiercrfError):
    """Experiment configuration is invalid or references missing files."""
