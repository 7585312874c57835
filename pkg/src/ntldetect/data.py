"""Consumption-matrix data model: CSV ingestion, gap detection, seasonal
calendar, and min-max scaling.

The central structure is :class:`ConsumptionMatrix`, a consumers x days grid
of daily kWh readings.  Missing readings are stored as IEEE NaN, which acts
as an explicit sentinel: it is not a valid consumption value and it poisons
any arithmetic that accidentally touches a gap.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConsumptionMatrix",
    "SeasonCalendar",
    "GapDescriptor",
    "MinMaxScaler",
    "load_csv",
    "save_csv",
    "detect_gaps",
    "minmax_normalize",
]

MISSING = np.nan

_DATE_FMT = "%Y-%m-%d"


class DataFormatError(ValueError):
    """Raised when an input file violates the wide CSV schema."""


@dataclass(frozen=True)
class GapDescriptor:
    """A maximal run of consecutive missing values in one consumer's series.

    ``row`` is the consumer index, ``t`` the first missing column and ``T``
    the run length in days.
    """

    row: int
    t: int
    T: int

    @property
    def end(self) -> int:
        """One past the last missing column."""
        return self.t + self.T


class SeasonCalendar:
    """Maps calendar dates onto 3-month season blocks.

    The year is partitioned into four blocks of three consecutive months,
    anchored at ``start_month`` (default 12: Dec-Feb, Mar-May, Jun-Aug,
    Sep-Nov).  A block is identified by ``(block_year, season)`` where
    ``block_year`` is the year the block starts in, so 2015-12-15 and
    2016-01-15 share the key ``(2015, 0)``.
    """

    def __init__(self, start_month: int = 12):
        if not 1 <= start_month <= 12:
            raise ValueError(f"start_month must be in 1..12, got {start_month}")
        self.start_month = start_month

    def season_of(self, date: dt.date) -> tuple[int, int]:
        """Return ``(block_year, season_index)`` for a date.

        ``season_index`` is 0..3; with the default December anchor, index 0
        is winter, 1 spring, 2 summer, 3 autumn.
        """
        months_since_start = (date.month - self.start_month) % 12
        season = months_since_start // 3
        # Year of the month that starts this block.
        block_start_month = (self.start_month - 1 + 3 * season) % 12 + 1
        block_year = date.year
        if date.month < block_start_month:
            block_year -= 1
        return block_year, season

    def block_start(self, block_year: int, season: int) -> dt.date:
        """First day of the given season block."""
        month = (self.start_month - 1 + 3 * season) % 12 + 1
        return dt.date(block_year, month, 1)

    def season_keys(self, dates: list[dt.date]) -> list[tuple[int, int]]:
        """``season_of`` applied to every date."""
        return [self.season_of(d) for d in dates]


@dataclass
class ConsumptionMatrix:
    """Per-consumer daily consumption with labels and an explicit calendar.

    values[i, j] is the kWh reading of consumer i on dates[j]; NaN marks a
    missing reading.  labels[i] is 0 for a genuine consumer, 1 for theft.
    """

    consumer_ids: list[str]
    labels: np.ndarray
    dates: list[dt.date]
    values: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        n, m = self.values.shape
        if len(self.consumer_ids) != n or len(self.labels) != n:
            raise ValueError("consumer_ids/labels length must match value rows")
        if len(self.dates) != m:
            raise ValueError("dates length must match value columns")
        for a, b in zip(self.dates, self.dates[1:]):
            if (b - a).days != 1:
                raise DataFormatError("non-monotone dates: calendar must advance by one day")
        if not np.isin(self.labels, (0, 1)).all():
            raise DataFormatError("labels must be 0 (genuine) or 1 (theft)")
        observed = self.values[~np.isnan(self.values)]
        if observed.size and (~np.isfinite(observed)).any():
            raise ValueError("non-missing cells must be finite")
        if observed.size and (observed < 0).any():
            raise ValueError("consumption readings must be >= 0")

    @property
    def n_consumers(self) -> int:
        return self.values.shape[0]

    @property
    def n_days(self) -> int:
        return self.values.shape[1]

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def is_complete(self) -> bool:
        return not np.isnan(self.values).any()

    def replace_values(self, values: np.ndarray) -> "ConsumptionMatrix":
        """New matrix sharing ids/labels/dates with different values."""
        return ConsumptionMatrix(self.consumer_ids, self.labels.copy(), list(self.dates), values)

    def take_rows(self, idx: np.ndarray) -> "ConsumptionMatrix":
        """Row subset, preserving order of ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        return ConsumptionMatrix(
            [self.consumer_ids[i] for i in idx],
            self.labels[idx],
            list(self.dates),
            self.values[idx],
        )


def _parse_cell(text: str, row_id: str, col_name: str) -> float:
    text = text.strip()
    if text == "" or text.lower() == "nan":
        return MISSING
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(
            f"non-numeric cell {text!r} at consumer {row_id!r}, column {col_name!r}"
        ) from None
    return value


def load_csv(path, id_column: str = "consumer_id", label_column: str = "label") -> ConsumptionMatrix:
    """Load a wide-format consumption CSV.

    Expected header: ``consumer_id,label,<ISO date>,<ISO date>,...`` with one
    column per day.  Empty cells and the literal ``NaN`` are read as missing.
    Accepts LF or CRLF line endings.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = [ln.rstrip("\r\n") for ln in fh if ln.strip() != ""]
    if not lines:
        raise DataFormatError("empty file")
    header = lines[0].split(",")
    if len(header) < 3 or header[0].strip() != id_column or header[1].strip() != label_column:
        raise DataFormatError(
            f"malformed header: expected '{id_column},{label_column},<dates...>', got {lines[0]!r}"
        )
    try:
        dates = [dt.datetime.strptime(c.strip(), _DATE_FMT).date() for c in header[2:]]
    except ValueError as exc:
        raise DataFormatError(f"malformed header: bad date column ({exc})") from None
    for a, b in zip(dates, dates[1:]):
        if (b - a).days != 1:
            raise DataFormatError(f"non-monotone dates: {a} followed by {b}")

    ids: list[str] = []
    labels: list[int] = []
    rows: list[list[float]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise DataFormatError(
                f"line {lineno}: expected {len(header)} fields, got {len(parts)}"
            )
        cid = parts[0].strip()
        label_text = parts[1].strip()
        if label_text not in ("0", "1"):
            raise DataFormatError(f"line {lineno}: label must be 0 or 1, got {label_text!r}")
        ids.append(cid)
        labels.append(int(label_text))
        rows.append([_parse_cell(c, cid, header[2 + j].strip()) for j, c in enumerate(parts[2:])])

    values = np.array(rows, dtype=np.float64) if rows else np.empty((0, len(dates)))
    return ConsumptionMatrix(ids, np.array(labels, dtype=np.int64), dates, values)


def save_csv(matrix: ConsumptionMatrix, path) -> None:
    """Write a matrix in the wide CSV format read by :func:`load_csv`.

    Values use shortest round-trip rendering so load(save(m)) is bit-exact;
    missing cells are written as empty fields.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("consumer_id,label," + ",".join(d.strftime(_DATE_FMT) for d in matrix.dates) + "\n")
        for i, cid in enumerate(matrix.consumer_ids):
            cells = [
                "" if np.isnan(v) else repr(float(v))
                for v in matrix.values[i]
            ]
            fh.write(f"{cid},{int(matrix.labels[i])}," + ",".join(cells) + "\n")


def detect_gaps(matrix: ConsumptionMatrix) -> list[GapDescriptor]:
    """All maximal missing runs, sorted by (row, start column)."""
    gaps: list[GapDescriptor] = []
    mask = matrix.missing_mask
    for i in range(mask.shape[0]):
        gaps.extend(detect_gaps_in_row(mask[i], i))
    return gaps


def detect_gaps_in_row(row_mask: np.ndarray, row_index: int = 0) -> list[GapDescriptor]:
    """Maximal missing runs of a single boolean mask row."""
    padded = np.concatenate(([False], row_mask, [False]))
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return [GapDescriptor(row_index, int(s), int(e - s)) for s, e in zip(starts, ends)]


@dataclass
class MinMaxScaler:
    """Per-column affine map onto [0, 1] with exact inverse."""

    col_min: np.ndarray
    col_max: np.ndarray

    @property
    def col_range(self) -> np.ndarray:
        return self.col_max - self.col_min

    def transform(self, values: np.ndarray) -> np.ndarray:
        rng = self.col_range
        safe = np.where(rng > 0, rng, 1.0)
        out = (values - self.col_min) / safe
        # Constant columns carry no information; pin them to 0.
        return np.where(rng > 0, out, 0.0)

    def inverse_transform(self, scaled: np.ndarray) -> np.ndarray:
        return scaled * self.col_range + self.col_min

    def to_dict(self) -> dict:
        return {
            "col_min": self.col_min.tolist(),
            "col_max": self.col_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(np.asarray(d["col_min"], float), np.asarray(d["col_max"], float))


def minmax_normalize(values: np.ndarray) -> tuple[np.ndarray, MinMaxScaler]:
    """Scale each column to [0, 1]; constant columns map to 0.

    Raises if any cell is missing: gaps must be imputed before scaling.
    """
    values = np.asarray(values, dtype=np.float64)
    if np.isnan(values).any():
        raise ValueError("cannot normalize: matrix still has missing cells")
    scaler = MinMaxScaler(values.min(axis=0), values.max(axis=0))
    return scaler.transform(values), scaler
