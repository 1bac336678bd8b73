"""Confusion counts, Cohen kappa, detection rate and false-positive rate.

"Detection rate" here is precision over flagged points (the fraction of
flagged points that are true anomalies), not recall; that is the convention
the report tables use. All rates are derived from integer counts with a
single float division each, so results are exact to the last bit against
rational arithmetic. Degenerate denominators produce None (and kappa a
degenerate flag), never NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import LengthMismatch
from .series import ANOMALY


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    kappa: float
    kappa_degenerate: bool
    detection_rate: Optional[float]
    false_positive_rate: Optional[float]

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "accuracy": self.accuracy,
            "kappa": self.kappa,
            "kappa_degenerate": self.kappa_degenerate,
            "detection_rate": self.detection_rate,
            "false_positive_rate": self.false_positive_rate,
        }


def confusion(gold, pred) -> ConfusionCounts:
    """Count tp/fp/tn/fn with the anomaly class as positive."""
    gold = np.asarray(gold)
    pred = np.asarray(pred)
    if gold.shape != pred.shape:
        raise LengthMismatch(f"gold has {gold.shape}, pred has {pred.shape}")
    if gold.size == 0:
        raise ValueError("need at least one point")
    g = gold == ANOMALY
    p = pred == ANOMALY
    return ConfusionCounts(
        tp=int(np.sum(g & p)),
        fp=int(np.sum(~g & p)),
        tn=int(np.sum(~g & ~p)),
        fn=int(np.sum(g & ~p)),
    )


def accuracy(c: ConfusionCounts) -> float:
    return (c.tp + c.tn) / c.n


def kappa(c: ConfusionCounts) -> tuple[float, bool]:
    """Cohen kappa and a flag for the degenerate chance-agreement case.

    kappa = (p_o - p_e) / (1 - p_e) with
    p_o = (tp+tn)/n and p_e = [(tp+fp)(tp+fn) + (tn+fn)(tn+fp)] / n^2.
    When p_e = 1 the formula is 0/0; by convention that returns 1 if the
    observed agreement is also perfect and 0 otherwise, flagged degenerate.
    Computed as one integer-ratio division so the result is exactly the
    rounded rational value.
    """
    n = c.n
    chance_num = (c.tp + c.fp) * (c.tp + c.fn) + (c.tn + c.fn) * (c.tn + c.fp)
    n2 = n * n
    if chance_num == n2:  # p_e == 1
        p_o_perfect = (c.tp + c.tn) == n
        return (1.0 if p_o_perfect else 0.0), True
    num = n * (c.tp + c.tn) - chance_num  # n^2 * (p_o - p_e)
    den = n2 - chance_num                 # n^2 * (1 - p_e)
    return num / den, False


def detection_rate(c: ConfusionCounts) -> Optional[float]:
    """tp / (tp + fp); None when nothing was flagged."""
    flagged = c.tp + c.fp
    if flagged == 0:
        return None
    return c.tp / flagged


def false_positive_rate(c: ConfusionCounts) -> Optional[float]:
    """fp / (fp + tn); None when there are no true normals."""
    negatives = c.fp + c.tn
    if negatives == 0:
        return None
    return c.fp / negatives


def evaluate(gold, pred) -> EvalReport:
    c = confusion(gold, pred)
    k, degenerate = kappa(c)
    return EvalReport(
        tp=c.tp,
        fp=c.fp,
        tn=c.tn,
        fn=c.fn,
        accuracy=accuracy(c),
        kappa=k,
        kappa_degenerate=degenerate,
        detection_rate=detection_rate(c),
        false_positive_rate=false_positive_rate(c),
    )
