"""Classification quality metrics with the theft class (1) as positive.

Curve points carry explicit thresholds so exported CSVs re-integrate to the
reported areas exactly.  Zero-denominator cases return 0 and raise a flag in
the result rather than failing silently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfusionCounts",
    "PrfResult",
    "CurvePoints",
    "MetricsReport",
    "confusion",
    "prf1",
    "roc_auc",
    "pr_auc",
    "mcc",
    "compute_report",
    "write_curve_csv",
]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def swapped(self) -> "ConfusionCounts":
        """Counts with the positive/negative roles exchanged."""
        return ConfusionCounts(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class PrfResult:
    precision: float
    recall: float
    fpr: float
    f1: float
    flags: tuple[str, ...] = ()


@dataclass
class CurvePoints:
    """Ordered (threshold, x, y) triples; thresholds strictly decreasing."""

    kind: str  # "roc" (x=FPR, y=TPR) or "pr" (x=recall, y=precision)
    points: list[tuple[float, float, float]]

    def __post_init__(self):
        thresholds = [p[0] for p in self.points]
        assert all(a > b for a, b in zip(thresholds, thresholds[1:])), "thresholds must decrease"


def _validate_labels(y_true, y_pred=None):
    y_true = np.asarray(y_true)
    if not np.isin(y_true, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if y_pred is not None:
        y_pred = np.asarray(y_pred)
        if len(y_pred) != len(y_true):
            raise ValueError("length mismatch")
        if not np.isin(y_pred, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
    return y_true, y_pred


def confusion(y_true, y_pred) -> ConfusionCounts:
    """Exact confusion counts; class 1 (theft) is positive."""
    y_true, y_pred = _validate_labels(y_true, y_pred)
    return ConfusionCounts(
        tp=int(((y_true == 1) & (y_pred == 1)).sum()),
        fp=int(((y_true == 0) & (y_pred == 1)).sum()),
        tn=int(((y_true == 0) & (y_pred == 0)).sum()),
        fn=int(((y_true == 1) & (y_pred == 0)).sum()),
    )


def prf1(c: ConfusionCounts) -> PrfResult:
    """Precision, recall, false-positive rate and F1 from counts.

    Any zero denominator yields 0 for that metric plus a flag naming it.
    """
    flags = []

    def ratio(num, den, name):
        if den == 0:
            flags.append(f"{name}_degenerate")
            return 0.0
        return num / den

    precision = ratio(c.tp, c.tp + c.fp, "precision")
    recall = ratio(c.tp, c.tp + c.fn, "recall")
    fpr = ratio(c.fp, c.tn + c.fp, "fpr")
    f1 = ratio(2 * precision * recall, precision + recall, "f1")
    return PrfResult(precision, recall, fpr, f1, tuple(flags))


def _sweep(y_true, scores):
    """Cumulative TP/FP counts at each distinct score threshold, descending."""
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    if len(y_true) != len(scores):
        raise ValueError("length mismatch")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_true = y_true[order]
    # Last index of each tie-group of equal scores.
    distinct = np.flatnonzero(np.diff(sorted_scores) != 0)
    ends = np.concatenate([distinct, [len(scores) - 1]])
    tps = np.cumsum(sorted_true)[ends]
    fps = np.cumsum(1 - sorted_true)[ends]
    return sorted_scores[ends], tps, fps


def roc_auc(y_true, scores) -> tuple[float, CurvePoints]:
    """Trapezoidal area under the ROC curve with tie groups collapsed.

    Equivalent to the rank statistic (concordant pairs + half of ties) over
    (positive, negative) pairs.  Requires both classes present.
    """
    y_true, _ = _validate_labels(y_true)
    n_pos = int((y_true == 1).sum())
    n_neg = len(y_true) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    thresholds, tps, fps = _sweep(y_true, scores)
    tpr = tps / n_pos
    fpr = fps / n_neg
    points = [(math.inf, 0.0, 0.0)] + [
        (float(t), float(x), float(y)) for t, x, y in zip(thresholds, fpr, tpr)
    ]
    xs = np.array([p[1] for p in points])
    ys = np.array([p[2] for p in points])
    auc = float(np.trapezoid(ys, xs))
    return auc, CurvePoints("roc", points)


def pr_auc(y_true, scores) -> tuple[float, CurvePoints]:
    """Step-wise area under the precision-recall curve.

    Area = sum over distinct descending thresholds of
    (recall_i - recall_{i-1}) * precision_i; the exported curve starts at
    recall 0 with the first attainable precision.
    """
    y_true, _ = _validate_labels(y_true)
    n_pos = int((y_true == 1).sum())
    if n_pos == 0:
        raise ValueError("PR curve needs at least one positive")
    thresholds, tps, fps = _sweep(y_true, scores)
    recall = tps / n_pos
    precision = tps / np.maximum(tps + fps, 1)
    deltas = np.diff(np.concatenate([[0.0], recall]))
    auc = float((deltas * precision).sum())
    points = [(math.inf, 0.0, float(precision[0]))] + [
        (float(t), float(r), float(p)) for t, r, p in zip(thresholds, recall, precision)
    ]
    return auc, CurvePoints("pr", points)


def mcc(c: ConfusionCounts) -> tuple[float, bool]:
    """Matthews correlation coefficient and a degeneracy flag.

    Returns (0, True) when any marginal factor of the denominator is zero.
    """
    factors = [c.tp + c.fp, c.tp + c.fn, c.tn + c.fp, c.tn + c.fn]
    if any(f == 0 for f in factors):
        return 0.0, True
    num = c.tp * c.tn - c.fp * c.fn
    den = math.sqrt(float(factors[0]) * factors[1] * factors[2] * factors[3])
    return num / den, False


@dataclass
class MetricsReport:
    """All headline numbers for one evaluation, plus the curve points."""

    confusion: ConfusionCounts
    precision: float
    recall: float
    fpr: float
    f1: float
    auc_roc: float
    pr_auc: float
    mcc: float
    flags: tuple[str, ...]
    roc_points: CurvePoints | None = None
    pr_points: CurvePoints | None = None
    macro: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "precision": self.precision,
            "recall": self.recall,
            "fpr": self.fpr,
            "f1": self.f1,
            "auc_roc": self.auc_roc,
            "pr_auc": self.pr_auc,
            "mcc": self.mcc,
            "confusion": self.confusion.to_dict(),
            "flags": list(self.flags),
        }
        if self.macro is not None:
            out["macro"] = self.macro
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def compute_report(y_true, y_pred, scores, *, macro: bool = True) -> MetricsReport:
    """Evaluate predictions and class-1 scores in one pass.

    Theft (class 1) is the positive class for the headline numbers; with
    ``macro`` a class-averaged precision/recall/F1 block is included too.
    """
    c = confusion(y_true, y_pred)
    p = prf1(c)
    auc, roc_points = roc_auc(y_true, scores)
    ap, pr_points = pr_auc(y_true, scores)
    m, m_degenerate = mcc(c)
    flags = p.flags + (("mcc_degenerate",) if m_degenerate else ())
    macro_block = None
    if macro:
        swapped = prf1(c.swapped())
        macro_block = {
            "precision": (p.precision + swapped.precision) / 2,
            "recall": (p.recall + swapped.recall) / 2,
            "f1": (p.f1 + swapped.f1) / 2,
        }
    return MetricsReport(
        confusion=c,
        precision=p.precision,
        recall=p.recall,
        fpr=p.fpr,
        f1=p.f1,
        auc_roc=auc,
        pr_auc=ap,
        mcc=m,
        flags=flags,
        roc_points=roc_points,
        pr_points=pr_points,
        macro=macro_block,
    )


def write_curve_csv(curve: CurvePoints, path) -> None:
    """``threshold,x,y`` rows rendered with 17 significant digits, enough to
    round-trip any double exactly."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("threshold,x,y\n")
        for t, x, y in curve.points:
            fh.write(f"{t:.17g},{x:.17g},{y:.17g}\n")
