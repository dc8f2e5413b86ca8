"""Trapezoidal window construction from unaligned same-channel curves.

A window stacks k curves of one channel with activation dates staggered
by a stride s.  Columns are date-aligned: position p of column j is the
calendar day start_day + p, which is retention day p - s*j of that
column's curve; the s*j positions before its activation are zero
padding.  Column info lengths therefore shrink from l = m + s*(k-1)
(column 0, oldest) down to m (column k-1, newest).  Targets continue
each column on its own retention axis for n further days, so all
columns' targets cover the same calendar days as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import LtvDataset, format_date
from .errors import InsufficientHistory, InvalidConfig, MissingCurve, OutOfRange


@dataclass(frozen=True)
class WindowSpec:
    """Window geometry: minimum info length m, horizon n, width k, stride s."""

    m: int
    n: int
    k: int
    s: int = 1

    def __post_init__(self):
        for name in ("m", "n", "k", "s"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise InvalidConfig(f"WindowSpec.{name} must be a positive integer, got {value!r}")

    @property
    def l(self) -> int:
        """Input length: the longest (oldest) column's info length."""
        return self.m + self.s * (self.k - 1)


def info_length(spec: WindowSpec, j: int) -> int:
    """Number of valid (non-padding) entries in column j, 0-indexed."""
    if not 0 <= j < spec.k:
        raise OutOfRange(f"column {j} outside [0, {spec.k})")
    return spec.m + spec.s * (spec.k - 1 - j)


def prefix_lengths(spec: WindowSpec) -> np.ndarray:
    """Zero-padding length per column: s*j leading zeros for column j."""
    return spec.s * np.arange(spec.k)


@dataclass(frozen=True)
class TrapezoidWindow:
    channel: str
    start_day: int  # day ordinal of column 0's activation date
    input: np.ndarray  # (l, k)
    target: np.ndarray | None  # (n, k) when built with_target
    user_counts: np.ndarray  # (k,) int
    spec: WindowSpec

    @property
    def newest_activation(self) -> int:
        """Activation ordinal of the last (shortest-info) column."""
        return self.start_day + self.spec.s * (self.spec.k - 1)

    @property
    def newest_prefix(self) -> np.ndarray:
        """The newest column's m observed values (its retention days 0..m-1)."""
        return self.input[self.spec.l - self.spec.m:, self.spec.k - 1]


def build_window(
    dataset: LtvDataset,
    channel: str,
    start_day: int,
    spec: WindowSpec,
    with_target: bool = False,
) -> TrapezoidWindow:
    """Assemble one window (and optionally its target matrix) from curves.

    Requires a curve at activation date start_day + s*j for every column
    j, each holding at least info_length(j) values (plus n more when
    with_target).
    """
    l, k, n, s = spec.l, spec.k, spec.n, spec.s
    inp = np.zeros((l, k), dtype=np.float64)
    tgt = np.zeros((n, k), dtype=np.float64) if with_target else None
    counts = np.zeros(k, dtype=np.int64)
    for j in range(k):
        activation = start_day + s * j
        curve = dataset.get(channel, activation)
        if curve is None:
            raise MissingCurve(f"no curve ({channel}, {format_date(activation)})")
        info = info_length(spec, j)
        need = info + n if with_target else info
        if len(curve) < need:
            raise InsufficientHistory(
                f"curve ({channel}, {format_date(activation)}) has {len(curve)} "
                f"days, column {j} needs {need}"
            )
        inp[s * j:, j] = curve.values[:info]
        if tgt is not None:
            tgt[:, j] = curve.values[info:info + n]
        counts[j] = curve.user_count
    return TrapezoidWindow(channel, start_day, inp, tgt, counts, spec)


def enumerate_windows(
    dataset: LtvDataset, spec: WindowSpec, with_target: bool = False
) -> tuple[list[TrapezoidWindow], int]:
    """All feasible windows plus a count of skipped start positions.

    Every activation date of a channel is tried as a start day; positions
    where build_window's preconditions fail are skipped.  Order is
    deterministic: channel id lexicographic, then start day ascending.
    """
    windows: list[TrapezoidWindow] = []
    skipped = 0
    for channel in dataset.channels():
        for start_day in dataset.activations(channel):
            try:
                windows.append(build_window(dataset, channel, start_day, spec, with_target))
            except (MissingCurve, InsufficientHistory):
                skipped += 1
    return windows, skipped


def last_column_view(window: TrapezoidWindow) -> tuple[np.ndarray, np.ndarray | None]:
    """Input and target of the newest column - the business objective."""
    target = None if window.target is None else window.target[:, -1]
    return window.input[:, -1], target


def dump_window(window: TrapezoidWindow, path) -> None:
    """Debug dump: one header line, then l rows of k tab-separated values."""
    spec = window.spec
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            f"# {window.channel},{format_date(window.start_day)},"
            f"m={spec.m},n={spec.n},k={spec.k},s={spec.s}\n"
        )
        for row in window.input:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")
