"""Gap imputation for daily consumption series.

Large gaps (runs of consecutive missing days) are filled by locating
reference windows that match the values adjacent to the gap, where matching
combines two dynamic-time-warping costs:

* plain DTW with squared-difference local cost, and
* derivative DTW (DDTW), i.e. DTW over a three-point derivative transform,
  which is robust to level outliers.

Candidate windows are restricted to a seasonal search space: only windows
whose dates fall in the ``search_size`` same-season calendar blocks nearest
the gap are considered.  A window survives the robustness filter when its
DDTW cost is below its DTW cost; exact matches (DTW cost 0) always survive.
The gap is filled with the average of the completions of the best match on
each side of the gap, with a deterministic fallback chain when no usable
match exists.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import ConsumptionMatrix, GapDescriptor, SeasonCalendar, detect_gaps_in_row

__all__ = [
    "Side",
    "WindowMatch",
    "NoQueryWindow",
    "derivative_transform",
    "dtw_cost",
    "find_candidates",
    "impute_gap",
    "impute_matrix",
]

MIN_QUERY_LEN = 3


class Side(Enum):
    BEFORE = "before"
    AFTER = "after"


class NoQueryWindow(ValueError):
    """No complete run of at least MIN_QUERY_LEN values adjacent to the gap."""


@dataclass(frozen=True)
class WindowMatch:
    """A scored candidate reference window.

    ``position`` is the start index of the candidate window, ``length`` its
    width (the query-window width, normally the gap length).
    """

    position: int
    dtw_cost: float
    ddtw_cost: float
    side: Side
    length: int


def derivative_transform(x: np.ndarray) -> np.ndarray:
    """Three-point derivative estimate at every interior point.

    For interior index a the estimate is
    ``((x[a] - x[a-1]) + (x[a+1] - x[a-1]) / 2) / 2``; the output drops the
    two boundary points, so it is two shorter than the input.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        squeeze = True
    else:
        squeeze = False
    if x.shape[-1] < 3:
        raise ValueError("derivative transform needs at least 3 points")
    d = ((x[:, 1:-1] - x[:, :-2]) + (x[:, 2:] - x[:, :-2]) / 2.0) / 2.0
    return d[0] if squeeze else d


def _accumulate_batch(local: np.ndarray) -> np.ndarray:
    """Batched DTW accumulation over anti-diagonals.

    ``local`` has shape (batch, n, m) of local costs; returns the (batch,)
    accumulated cost at cell (n-1, m-1) under the standard three-move
    recurrence (up, left, diagonal).
    """
    B, n, m = local.shape
    acc = np.full((B, n, m), np.inf)
    acc[:, 0, 0] = local[:, 0, 0]
    for d in range(1, n + m - 1):
        lo = max(0, d - m + 1)
        hi = min(n - 1, d)
        ii = np.arange(lo, hi + 1)
        jj = d - ii
        best = np.full((B, ii.size), np.inf)
        up = ii > 0
        if up.any():
            best[:, up] = acc[:, ii[up] - 1, jj[up]]
        left = jj > 0
        if left.any():
            best[:, left] = np.minimum(best[:, left], acc[:, ii[left], jj[left] - 1])
        diag = up & left
        if diag.any():
            best[:, diag] = np.minimum(best[:, diag], acc[:, ii[diag] - 1, jj[diag] - 1])
        acc[:, ii, jj] = local[:, ii, jj] + best
    return acc[:, n - 1, m - 1]


def _dtw_batch(query: np.ndarray, windows: np.ndarray) -> np.ndarray:
    """DTW cost of one query against a stack of windows (squared local cost)."""
    local = (query[None, :, None] - windows[:, None, :]) ** 2
    return _accumulate_batch(local)


def dtw_cost(a, b, local_cost: str = "squared") -> float:
    """Dynamic-time-warping distance between two sequences.

    ``local_cost`` selects the per-cell cost: "squared" uses
    ``(a_i - b_j)**2`` on the raw values; "derivative" applies
    :func:`derivative_transform` to both sequences first (each must then be
    at least 3 long) and uses the squared difference of the derivatives.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("dtw_cost requires non-empty sequences")
    if local_cost == "derivative":
        a = derivative_transform(a)
        b = derivative_transform(b)
    elif local_cost != "squared":
        raise ValueError(f"unknown local cost {local_cost!r}")
    return float(_dtw_batch(a, b[None, :])[0])


def _complete_window_starts(ok: np.ndarray, length: int) -> np.ndarray:
    """Start indices p where ok[p:p+length] is all True."""
    if length > ok.size:
        return np.empty(0, dtype=np.int64)
    counts = np.convolve(ok.astype(np.int64), np.ones(length, dtype=np.int64), mode="valid")
    return np.flatnonzero(counts == length)


def _allowed_columns(
    season_keys: list[tuple[int, int]],
    calendar: SeasonCalendar,
    gap_date: dt.date,
    search_size: int,
) -> np.ndarray:
    """Mask of columns whose season block is among the ``search_size``
    same-season blocks nearest the gap's block."""
    gap_key = calendar.season_of(gap_date)
    season = gap_key[1]
    matching = sorted({k for k in season_keys if k[1] == season})
    gap_start = calendar.block_start(*gap_key)
    matching.sort(key=lambda k: (abs((calendar.block_start(*k) - gap_start).days), k))
    chosen = set(matching[:search_size])
    return np.array([k in chosen for k in season_keys], dtype=bool)


def _query_window(series: np.ndarray, gap: GapDescriptor, side: Side) -> tuple[int, int]:
    """(start, length) of the complete run adjacent to the gap on one side.

    At most ``gap.T`` values are taken; fewer are accepted down to
    MIN_QUERY_LEN, below which :class:`NoQueryWindow` is raised.
    """
    n = series.size
    if side is Side.BEFORE:
        end = gap.t
        start = end
        while start > 0 and end - start < gap.T and not np.isnan(series[start - 1]):
            start -= 1
    else:
        start = gap.end
        end = start
        while end < n and end - start < gap.T and not np.isnan(series[end]):
            end += 1
    if end - start < MIN_QUERY_LEN:
        raise NoQueryWindow(f"no complete query window on side {side.value}")
    return start, end - start


def find_candidates(
    series: np.ndarray,
    dates: list[dt.date],
    gap: GapDescriptor,
    calendar: SeasonCalendar,
    search_size: int,
    side: Side,
    *,
    filter_ddtw: bool = True,
) -> list[WindowMatch]:
    """Score every admissible reference window on one side's query.

    A window is admissible when it is complete (no missing values), lies
    entirely inside the seasonal search space, and does not overlap the gap
    or the query window.  With ``filter_ddtw`` (the default) only windows
    whose DDTW cost is strictly below their DTW cost are returned, except
    that perfect matches (DTW cost 0) are always kept.  Candidates are
    ordered by start position.
    """
    series = np.asarray(series, dtype=np.float64)
    if search_size < 1:
        raise ValueError("search_size must be >= 1")
    q_start, q_len = _query_window(series, gap, side)
    query = series[q_start : q_start + q_len]

    season_keys = calendar.season_keys(dates)
    allowed = _allowed_columns(season_keys, calendar, dates[gap.t], search_size)
    ok = allowed & ~np.isnan(series)
    ok[q_start : q_start + q_len] = False  # window may not overlap the query
    ok[gap.t : gap.end] = False  # nor the gap (already NaN, kept explicit)
    positions = _complete_window_starts(ok, q_len)
    if positions.size == 0:
        return []

    windows = series[positions[:, None] + np.arange(q_len)[None, :]]
    dtw = _dtw_batch(query, windows)
    d_query = derivative_transform(query)
    d_windows = derivative_transform(windows)
    ddtw = _dtw_batch(d_query, d_windows)

    matches = [
        WindowMatch(int(p), float(c), float(dc), side, q_len)
        for p, c, dc in zip(positions, dtw, ddtw)
    ]
    if filter_ddtw:
        matches = [m for m in matches if m.ddtw_cost < m.dtw_cost or m.dtw_cost == 0.0]
    return matches


def _completion(series: np.ndarray, match: WindowMatch, T: int) -> np.ndarray | None:
    """The length-T run that plays the gap's role next to a matched window.

    For a BEFORE match the completion follows the window; for an AFTER match
    it precedes it.  Returns None when out of range or incomplete.
    """
    if match.side is Side.BEFORE:
        start = match.position + match.length
    else:
        start = match.position - T
    if start < 0 or start + T > series.size:
        return None
    run = series[start : start + T]
    if np.isnan(run).any():
        return None
    return run


def _season_mean(series, season_keys, gap_season) -> float | None:
    vals = [v for v, k in zip(series, season_keys) if k[1] == gap_season and not np.isnan(v)]
    return float(np.mean(vals)) if vals else None


def impute_gap(
    series: np.ndarray,
    dates: list[dt.date],
    gap: GapDescriptor,
    calendar: SeasonCalendar,
    search_size: int = 1,
    *,
    one_sided: bool = False,
) -> tuple[np.ndarray, str]:
    """Fill one gap; returns (values of length gap.T, method tag).

    The best candidate per side is the minimum-DDTW survivor of the filter
    whose completion run exists; ties resolve to the lowest position.  With
    matches on both sides the fill is the element-wise mean of the two
    completions.  Fallbacks, in order: minimum plain-DTW candidate in the
    seasonal search space, same-season mean of the row, row mean, zero.
    All fills are clamped at 0.
    """
    series = np.asarray(series, dtype=np.float64)
    sides = (Side.BEFORE,) if one_sided else (Side.BEFORE, Side.AFTER)

    best: dict[Side, tuple[WindowMatch, np.ndarray]] = {}
    unfiltered: list[tuple[WindowMatch, np.ndarray]] = []
    for side in sides:
        try:
            cands = find_candidates(
                series, dates, gap, calendar, search_size, side, filter_ddtw=False
            )
        except NoQueryWindow:
            continue
        for m in cands:
            comp = _completion(series, m, gap.T)
            if comp is None:
                continue
            unfiltered.append((m, comp))
            keeps = m.ddtw_cost < m.dtw_cost or m.dtw_cost == 0.0
            if keeps and (side not in best or m.ddtw_cost < best[side][0].ddtw_cost):
                best[side] = (m, comp)

    if len(best) == 2:
        fill = (best[Side.BEFORE][1] + best[Side.AFTER][1]) / 2.0
        method = "two_sided"
    elif len(best) == 1:
        (side,) = best
        fill = best[side][1]
        method = f"{side.value}_only"
    elif unfiltered:
        m, comp = min(unfiltered, key=lambda mc: (mc[0].dtw_cost, mc[0].position))
        fill = comp
        method = "plain_dtw"
    else:
        season_keys = calendar.season_keys(dates)
        mean = _season_mean(series, season_keys, calendar.season_of(dates[gap.t])[1])
        if mean is not None:
            fill = np.full(gap.T, mean)
            method = "season_mean"
        else:
            observed = series[~np.isnan(series)]
            fill = np.full(gap.T, float(observed.mean()) if observed.size else 0.0)
            method = "row_mean" if observed.size else "zero"
    return np.maximum(fill, 0.0), method


def _interpolate_short_gap(series: np.ndarray, gap: GapDescriptor) -> np.ndarray | None:
    """Linear interpolation across a short gap; None if no neighbor exists."""
    left = series[gap.t - 1] if gap.t > 0 else np.nan
    right = series[gap.end] if gap.end < series.size else np.nan
    if np.isnan(left) and np.isnan(right):
        return None
    if np.isnan(left):
        return np.full(gap.T, right)
    if np.isnan(right):
        return np.full(gap.T, left)
    steps = np.arange(1, gap.T + 1) / (gap.T + 1)
    return left + steps * (right - left)


def impute_row(
    series: np.ndarray,
    dates: list[dt.date],
    calendar: SeasonCalendar,
    search_size: int = 1,
    min_gap: int = 3,
    *,
    one_sided: bool = False,
) -> tuple[np.ndarray, dict[str, int]]:
    """Fill every gap in one row; returns (complete series, method counts).

    Gaps shorter than ``min_gap`` use linear interpolation.  Every gap is
    matched against the original row (other gaps still missing), then all
    fills are written at once, so results do not depend on gap order.
    """
    series = np.asarray(series, dtype=np.float64)
    gaps = detect_gaps_in_row(np.isnan(series))
    counts: dict[str, int] = {}
    fills: list[tuple[GapDescriptor, np.ndarray]] = []
    for gap in gaps:
        if gap.T < min_gap:
            fill = _interpolate_short_gap(series, gap)
            if fill is not None:
                fills.append((gap, np.maximum(fill, 0.0)))
                counts["linear"] = counts.get("linear", 0) + 1
                continue
        fill, method = impute_gap(
            series, dates, gap, calendar, search_size, one_sided=one_sided
        )
        fills.append((gap, fill))
        counts[method] = counts.get(method, 0) + 1
    out = series.copy()
    for gap, fill in fills:
        out[gap.t : gap.end] = fill
    return out, counts


def impute_matrix(
    matrix: ConsumptionMatrix,
    calendar: SeasonCalendar | None = None,
    search_size: int = 1,
    min_gap: int = 3,
    *,
    one_sided: bool = False,
) -> tuple[ConsumptionMatrix, dict[str, int]]:
    """Fill every missing cell of the matrix; non-missing cells are untouched.

    Rows are processed independently; the result is deterministic.  Returns
    the completed matrix and the per-method fill counts over all gaps.
    """
    if calendar is None:
        calendar = SeasonCalendar()
    out = matrix.values.copy()
    totals: dict[str, int] = {}
    for i in range(matrix.n_consumers):
        if not np.isnan(out[i]).any():
            continue
        filled, counts = impute_row(
            out[i], matrix.dates, calendar, search_size, min_gap, one_sided=one_sided
        )
        out[i] = filled
        for k, v in counts.items():
            totals[k] = totals.get(k, 0) + v
    return matrix.replace_values(out), totals
