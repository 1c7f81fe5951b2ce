"""Detection metrics: confusion counts, DR / FAR / F1, ROC curves and the multi-voter.

An abnormal trace (label -1) is the positive class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyClass, LengthMismatch, SingleClass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def n_abnormal(self) -> int:
        return self.tp + self.fn

    @property
    def n_normal(self) -> int:
        return self.fp + self.tn


@dataclass(frozen=True)
class MetricsReport:
    dr: float | None
    far: float | None
    precision: float | None
    f1: float | None
    counts: ConfusionCounts | None = None


def _labels(values: Sequence[int], what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=int).ravel()
    if not np.isin(arr, (1, -1)).all():
        raise ValueError(f"{what} must be +1 or -1")
    return arr


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    p = _labels(predictions, "predictions")
    y = _labels(labels, "labels")
    if len(p) != len(y):
        raise LengthMismatch(f"{len(p)} predictions for {len(y)} labels")
    if len(p) == 0:
        raise LengthMismatch("no predictions")
    return ConfusionCounts(
        tp=int(np.sum((y == -1) & (p == -1))),
        fn=int(np.sum((y == -1) & (p == 1))),
        fp=int(np.sum((y == 1) & (p == -1))),
        tn=int(np.sum((y == 1) & (p == 1))),
    )


def f1_measure(dr: float, far: float, n1: int, n2: int) -> float:
    """F1 from detection rate, false alarm rate and the class sizes.

    n1 is the normal test count, n2 the abnormal test count.
    """
    if dr <= 0:
        return 0.0
    return 2.0 / (1.0 + 1.0 / dr + (far / dr) * (n1 / n2))


def rates(c: ConfusionCounts, allow_empty: bool = False) -> MetricsReport:
    """DR, FAR, precision and F1.  Undefined quantities are reported as None."""
    if not allow_empty and (c.n_abnormal == 0 or c.n_normal == 0):
        raise EmptyClass(f"need both classes (normal={c.n_normal}, abnormal={c.n_abnormal})")
    dr = c.tp / c.n_abnormal if c.n_abnormal else None
    far = c.fp / c.n_normal if c.n_normal else None
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else None
    f1 = f1_measure(dr, far, c.n_normal, c.n_abnormal) if dr is not None and far is not None else None
    return MetricsReport(dr, far, precision, f1, c)


def evaluate(predictions: Sequence[int], labels: Sequence[int]) -> MetricsReport:
    return rates(confusion(predictions, labels))


@dataclass(frozen=True)
class RocCurve:
    points: tuple[tuple[float, float], ...]  # (far, dr)
    auc: float

    def to_text(self, delimiter: str = ",") -> str:
        lines = [f"far{delimiter}dr"]
        lines.extend(f"{far!r}{delimiter}{dr!r}" for far, dr in self.points)
        return "\n".join(lines) + "\n"


def trapezoid_auc(points: Sequence[tuple[float, float]]) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def _curve(points) -> RocCurve:
    pts = sorted(set(points) | {(0.0, 0.0), (1.0, 1.0)})
    return RocCurve(tuple(pts), trapezoid_auc(pts))


def roc_curve(decision_values: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """Sweep a threshold t over the scores, flagging abnormal when score < t.

    Low decision values mean abnormal, so the sweep runs from "flag nothing"
    to "flag everything".
    """
    s = np.asarray(decision_values, dtype=float).ravel()
    y = _labels(labels, "labels")
    if len(s) != len(y):
        raise LengthMismatch(f"{len(s)} scores for {len(y)} labels")
    n_abn = int(np.sum(y == -1))
    n_norm = int(np.sum(y == 1))
    if n_abn == 0 or n_norm == 0:
        raise SingleClass("ROC needs both normal and abnormal samples")
    order = np.argsort(s, kind="stable")
    s, y = s[order], y[order]
    # after each block of tied scores, everything so far is flagged
    last_of_block = np.append(s[1:] != s[:-1], True)
    tp = np.cumsum(y == -1)[last_of_block]
    fp = np.cumsum(y == 1)[last_of_block]
    points = [(0.0, 0.0)] + [(float(f / n_norm), float(t / n_abn)) for f, t in zip(fp, tp)]
    return _curve(points)


def roc_from_points(points: Sequence[tuple[float, float]]) -> RocCurve:
    """ROC curve from explicit (far, dr) operating points, e.g. one per nu."""
    return _curve([(float(f), float(d)) for f, d in points])


def multi_voter(member_predictions: Sequence[Sequence[int]]) -> list[int]:
    if len(member_predictions) == 0:
        raise LengthMismatch("voter needs at least one member")
    arrs = [_labels(m, "member predictions") for m in member_predictions]
    if len({len(a) for a in arrs}) != 1:
        raise LengthMismatch("voter members disagree on the number of traces")
    total = np.sum(arrs, axis=0)
    return [(-1 if v < 0 else 1) for v in total]


def pct(x: float | None) -> str:
    return "-" if x is None else f"{100.0 * x:.3f}"


__all__ = [
    "ConfusionCounts", "MetricsReport", "RocCurve", "confusion", "evaluate", "f1_measure",
    "multi_voter", "pct", "rates", "roc_curve", "roc_from_points", "trapezoid_auc",
]
