"""Binary screening metrics: confusion counts, ROC AUC, AP and a summary report.

Label 1 is the positive (referable) class throughout.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    """Raised when a metric has no meaning for the given labels."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_matrix(self) -> np.ndarray:
        """Rows are true class (0, 1), columns predicted class (0, 1)."""
        return np.array([[self.tn, self.fp], [self.fn, self.tp]])


@dataclass(frozen=True)
class MetricsReport:
    ap: float | None
    auc: float | None
    acc: float
    f1: float
    sen: float
    spe: float
    counts: ConfusionCounts
    threshold: float

    COLUMNS = ("ap", "auc", "acc", "f1", "sen", "spe")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = asdict(self.counts)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["counts"] = ConfusionCounts(**d["counts"])
        return cls(**d)

    def row(self) -> str:
        cells = ["  -  " if getattr(self, c) is None else f"{getattr(self, c):.3f}" for c in self.COLUMNS]
        return " | ".join(cells)


def _validate(labels, scores) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.ndim != 1 or s.ndim != 1 or y.shape != s.shape:
        raise ValueError(f"labels and scores must be equal-length vectors, got {y.shape} and {s.shape}")
    if y.size == 0:
        raise ValueError("labels and scores are empty")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return y.astype(np.int64), s


def confusion_counts(labels: Sequence[int], scores: Sequence[float], threshold: float = 0.5) -> ConfusionCounts:
    y, s = _validate(labels, scores)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def roc_auc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Trapezoidal area under the ROC curve over all distinct thresholds.

    The area is accumulated in integer units of ``1 / (2 * P * N)``, which
    makes it equal to the pairwise concordance statistic (ties count half).
    """
    y, s = _validate(labels, scores)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs at least one positive and one negative sample")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # cumulative counts at the end of every run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), y.size - 1]
    tps = np.cumsum(y_sorted)[ends]
    fps = (ends + 1) - tps
    tps = np.r_[0, tps]
    fps = np.r_[0, fps]
    twice_area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    return twice_area / (2 * n_pos * n_neg)


def average_precision(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Step-sum AP over the ranked list; tied scores rank negatives first."""
    y, s = _validate(labels, scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive sample")
    order = np.lexsort((y, -s))
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1
    precision_at_hits = np.arange(1, n_pos + 1) / ranks
    return float(precision_at_hits.sum() / n_pos)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def threshold_metrics(counts: ConfusionCounts) -> dict[str, float]:
    """Acc, F1, Sen and Spe from confusion counts; empty denominators give 0."""
    sen = _ratio(counts.tp, counts.tp + counts.fn)
    prec = _ratio(counts.tp, counts.tp + counts.fp)
    return {
        "acc": (counts.tp + counts.tn) / counts.total,
        "f1": 2 * prec * sen / (prec + sen) if prec + sen > 0 else 0.0,
        "sen": sen,
        "spe": _ratio(counts.tn, counts.tn + counts.fp),
    }


def metrics_summary(labels: Sequence[int], scores: Sequence[float], threshold: float = 0.5) -> MetricsReport:
    counts = confusion_counts(labels, scores, threshold)
    return MetricsReport(
        ap=average_precision(labels, scores),
        auc=roc_auc(labels, scores),
        counts=counts,
        threshold=float(threshold),
        **threshold_metrics(counts),
    )
