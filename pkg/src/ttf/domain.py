"""Core domain records: channels, activation dates, LTV curves, datasets.

A channel's users are grouped by activation date; each group yields one
LTV curve (average daily value per retention day, day 0 = activation
date) plus the group's activated-user count.

Dates are held internally as proleptic-Gregorian ordinals
(``datetime.date.toordinal``) so all window arithmetic is plain integer
arithmetic; calendar parsing happens only at I/O boundaries.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    DuplicateObservation,
    InsufficientHistory,
    OutOfRange,
    ParseError,
    RetentionGap,
)

DATASET_HEADER = ["channel_id", "activation_date", "retention_day", "ltv", "user_count"]


def parse_date(text: str) -> int:
    """ISO-8601 date string -> day ordinal."""
    try:
        return dt.date.fromisoformat(text).toordinal()
    except ValueError as exc:
        raise ParseError(f"bad date {text!r}: {exc}") from None


def format_date(ordinal: int) -> str:
    return dt.date.fromordinal(ordinal).isoformat()


@dataclass(frozen=True)
class LtvCurve:
    """One channel x activation-date daily LTV series.

    ``values[i]`` is the average LTV generated on retention day ``i``;
    index 0 is the activation date itself.  ``user_count`` is the number
    of users activated that day on that channel.
    """

    channel: str
    activation: int  # day ordinal
    values: np.ndarray  # float64, shape (length,)
    user_count: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if not self.channel:
            raise ParseError("channel id must be non-empty")
        if values.ndim != 1:
            raise ParseError("curve values must be one-dimensional")
        if values.size and values.min() < 0:
            raise ParseError(
                f"negative LTV in curve ({self.channel}, {format_date(self.activation)})"
            )
        if self.user_count < 1:
            raise ParseError("user_count must be >= 1")

    def __len__(self) -> int:
        return self.values.size

    @property
    def activation_date(self) -> dt.date:
        return dt.date.fromordinal(self.activation)


def ltv_n(curve: LtvCurve, n_days: int) -> float:
    """Cumulative LTV over retention days [0, n_days).

    Half-open on the right: ``ltv_n(curve, 30)`` consumes exactly the
    first 30 values.
    """
    if n_days < 0:
        raise OutOfRange(f"n_days must be >= 0, got {n_days}")
    if n_days > len(curve):
        raise InsufficientHistory(
            f"curve ({curve.channel}, {format_date(curve.activation)}) has "
            f"{len(curve)} days, needs {n_days}"
        )
    return float(curve.values[:n_days].sum())


def slice_curve(curve: LtvCurve, start: int, end: int) -> np.ndarray:
    """Half-open slice ``values[start:end]`` with explicit bounds checking."""
    if not (0 <= start <= end <= len(curve)):
        raise OutOfRange(
            f"slice [{start}, {end}) invalid for curve of length {len(curve)}"
        )
    return curve.values[start:end].copy()


class HolidayCalendar:
    """Set of holiday dates, file format: one ISO date per line, '#' comments."""

    def __init__(self, dates: Iterable[int] = ()):
        self._dates = frozenset(int(d) for d in dates)

    def __contains__(self, ordinal: int) -> bool:
        return int(ordinal) in self._dates

    def __len__(self) -> int:
        return len(self._dates)

    def ordinals(self) -> frozenset[int]:
        return self._dates

    @classmethod
    def load(cls, path) -> "HolidayCalendar":
        dates = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    dates.append(parse_date(line))
        return cls(dates)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for ordinal in sorted(self._dates):
                fh.write(format_date(ordinal) + "\n")


@dataclass
class LtvDataset:
    """Immutable collection of curves keyed by (channel, activation ordinal)."""

    curves: dict[tuple[str, int], LtvCurve] = field(default_factory=dict)
    calendar: HolidayCalendar | None = None

    def __len__(self) -> int:
        return len(self.curves)

    def __iter__(self) -> Iterator[LtvCurve]:
        """Curves in canonical (channel, activation) order."""
        for key in sorted(self.curves):
            yield self.curves[key]

    def get(self, channel: str, activation: int) -> LtvCurve | None:
        return self.curves.get((channel, activation))

    def channels(self) -> list[str]:
        return sorted({c for c, _ in self.curves})

    def activations(self, channel: str) -> list[int]:
        return sorted(a for c, a in self.curves if c == channel)

    @classmethod
    def from_curves(cls, curves: Iterable[LtvCurve], calendar: HolidayCalendar | None = None):
        table: dict[tuple[str, int], LtvCurve] = {}
        for curve in curves:
            key = (curve.channel, curve.activation)
            if key in table:
                raise DuplicateObservation(
                    f"duplicate curve ({curve.channel}, {format_date(curve.activation)})"
                )
            table[key] = curve
        return cls(table, calendar)


def load_dataset(path, calendar: HolidayCalendar | None = None) -> LtvDataset:
    """Read the canonical CSV schema into a validated dataset.

    Columns: ``channel_id,activation_date,retention_day,ltv,user_count``.
    Rows of one (channel, activation date) must form a gap-free run of
    retention days starting at 0 and carry one constant user_count.
    """
    rows: dict[tuple[str, int], dict[int, float]] = {}
    counts: dict[tuple[str, int], int] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DATASET_HEADER:
            raise ParseError(f"bad header {header!r}, expected {DATASET_HEADER!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"line {lineno}: expected 5 fields, got {len(row)}")
            channel, date_text, day_text, ltv_text, count_text = row
            if not channel:
                raise ParseError(f"line {lineno}: empty channel id")
            activation = parse_date(date_text)
            try:
                day = int(day_text)
                value = float(ltv_text)
                count = int(count_text)
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            if day < 0:
                raise ParseError(f"line {lineno}: negative retention day")
            if value < 0:
                raise ParseError(f"line {lineno}: negative ltv")
            if count < 1:
                raise ParseError(f"line {lineno}: user_count must be >= 1")
            key = (channel, activation)
            curve_rows = rows.setdefault(key, {})
            if day in curve_rows:
                raise DuplicateObservation(
                    f"line {lineno}: duplicate ({channel}, {date_text}, day {day})"
                )
            curve_rows[day] = value
            if counts.setdefault(key, count) != count:
                raise ParseError(
                    f"line {lineno}: user_count changed within curve ({channel}, {date_text})"
                )

    curves = []
    for (channel, activation), curve_rows in rows.items():
        days = sorted(curve_rows)
        if days != list(range(len(days))):
            missing = sorted(set(range(days[-1] + 1)) - set(days))
            raise RetentionGap(
                f"curve ({channel}, {format_date(activation)}) missing retention "
                f"days {missing[:5]}"
            )
        values = np.array([curve_rows[d] for d in days], dtype=np.float64)
        curves.append(LtvCurve(channel, activation, values, counts[(channel, activation)]))
    return LtvDataset.from_curves(curves, calendar)


def dataset_to_csv(dataset: LtvDataset) -> str:
    """Canonical CSV text in (channel, date, retention day) order.

    Floats are written with ``repr`` so load -> save round-trips
    byte-identically up to row ordering.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DATASET_HEADER)
    for curve in dataset:
        date_text = format_date(curve.activation)
        for day, value in enumerate(curve.values):
            writer.writerow(
                [curve.channel, date_text, day, repr(float(value)), curve.user_count]
            )
    return buf.getvalue()


def save_dataset(dataset: LtvDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dataset_to_csv(dataset))
