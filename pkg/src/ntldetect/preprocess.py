"""Outlier removal and class rebalancing.

Consumers whose series contains any reading more than ``threshold`` standard
deviations from its column mean are dropped whole.  The surviving majority
class is then shrunk with Near-Miss version 1: keep the majority samples
whose mean Euclidean distance to their k nearest minority samples is
smallest, so both classes end up the same size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ConsumptionMatrix

__all__ = ["ZScoreReport", "zscore_filter", "near_miss_undersample"]


@dataclass
class ZScoreReport:
    """Statistics and outcome of one z-score filtering pass."""

    mean: np.ndarray
    std: np.ndarray
    threshold: float
    dropped_rows: list[int] = field(default_factory=list)
    axis: int = 0

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "axis": self.axis,
            "n_dropped": len(self.dropped_rows),
            "dropped_rows": self.dropped_rows,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }


def zscore_filter(
    matrix: ConsumptionMatrix,
    threshold: float = 3.0,
    *,
    axis: int = 0,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[ConsumptionMatrix, ZScoreReport]:
    """Drop every row containing a cell with |z| above ``threshold``.

    Mean and standard deviation are computed per column (``axis=0``, the
    default) or per row (``axis=1``) over the complete matrix, using the
    population (n-denominator) standard deviation.  Columns with zero spread
    score z = 0 everywhere.  Pass ``stats`` to reuse previously recorded
    (mean, std) instead of recomputing, which makes the filter idempotent.
    """
    if matrix.n_consumers == 0:
        raise ValueError("cannot filter an empty matrix")
    values = matrix.values
    if np.isnan(values).any():
        raise ValueError("z-score filtering requires a complete matrix")
    if axis not in (0, 1):
        raise ValueError("axis must be 0 (columns) or 1 (rows)")

    if stats is not None:
        mean, std = (np.asarray(s, dtype=float) for s in stats)
    else:
        mean = values.mean(axis=axis)
        std = values.std(axis=axis)
    safe = np.where(std > 0, std, 1.0)
    if axis == 0:
        z = (values - mean[None, :]) / safe[None, :]
        z[:, std == 0] = 0.0
    else:
        z = (values - mean[:, None]) / safe[:, None]
        z[std == 0, :] = 0.0

    keep = np.abs(z).max(axis=1) <= threshold
    report = ZScoreReport(
        mean=mean,
        std=std,
        threshold=float(threshold),
        dropped_rows=[int(i) for i in np.flatnonzero(~keep)],
        axis=axis,
    )
    return matrix.take_rows(np.flatnonzero(keep)), report


def _mean_knn_distance(majority: np.ndarray, minority: np.ndarray, k: int) -> np.ndarray:
    """Mean distance from each majority row to its k nearest minority rows,
    computed in blocks to bound memory."""
    out = np.empty(majority.shape[0])
    block = max(1, int(2**22 // max(minority.shape[0], 1)))
    for lo in range(0, majority.shape[0], block):
        chunk = majority[lo : lo + block]
        d2 = ((chunk[:, None, :] - minority[None, :, :]) ** 2).sum(axis=2)
        if k < minority.shape[0]:
            part = np.partition(d2, k - 1, axis=1)[:, :k]
        else:
            part = d2
        out[lo : lo + chunk.shape[0]] = np.sqrt(part).mean(axis=1)
    return out


def near_miss_undersample(
    features: np.ndarray,
    labels: np.ndarray,
    k: int = 3,
    target_per_class: int | None = None,
    seed: int = 0,
    *,
    return_indices: bool = False,
):
    """Near-Miss (version 1) undersampling to exactly balanced classes.

    For each majority sample the mean Euclidean distance to its ``k``
    nearest minority samples is computed; the ``target_per_class`` majority
    samples with the smallest mean distance are kept (ties resolve to the
    lower row index).  The minority class is kept whole when its size equals
    the target, otherwise uniformly subsampled with ``seed``.  Output rows
    are the selected input rows in original order.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    counts = {c: int((y == c).sum()) for c in (0, 1)}
    if counts[0] == 0 or counts[1] == 0:
        raise ValueError("near-miss requires both classes present")
    majority = 0 if counts[0] >= counts[1] else 1
    minority = 1 - majority
    if target_per_class is None:
        target_per_class = counts[minority]
    if target_per_class > counts[minority]:
        raise ValueError(
            f"target_per_class={target_per_class} exceeds minority count {counts[minority]}"
        )
    if target_per_class < 1:
        raise ValueError("target_per_class must be >= 1")
    if k > counts[minority]:
        raise ValueError(f"k={k} exceeds minority count {counts[minority]}")

    maj_idx = np.flatnonzero(y == majority)
    min_idx = np.flatnonzero(y == minority)
    dist = _mean_knn_distance(X[maj_idx], X[min_idx], k)
    order = np.lexsort((maj_idx, dist))  # distance first, row index breaks ties
    keep_maj = maj_idx[order[:target_per_class]]

    if counts[minority] > target_per_class:
        rng = np.random.default_rng(seed)
        keep_min = rng.choice(min_idx, size=target_per_class, replace=False)
    else:
        keep_min = min_idx
    keep = np.sort(np.concatenate([keep_maj, keep_min]))
    if return_indices:
        return X[keep], y[keep], keep
    return X[keep], y[keep]
