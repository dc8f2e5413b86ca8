"""Trapezoid window geometry and construction.

The key correctness statement: position p of column j holds retention
day p - s*j of the curve activated at start_day + s*j, with exact zeros
before activation.  A brute-force per-cell lookup oracle checks the
vectorized builder over randomized geometries.
"""

import numpy as np
import pytest

from ttf.domain import LtvCurve, LtvDataset, parse_date
from ttf.errors import InsufficientHistory, InvalidConfig, MissingCurve, OutOfRange
from ttf.trapezoid import (
    TrapezoidWindow,
    WindowSpec,
    build_window,
    dump_window,
    enumerate_windows,
    info_length,
    last_column_view,
    prefix_lengths,
)

BASE = parse_date("2024-01-01")


def channel_dataset(num_days=30, length=40, channel="ch00", seed=0):
    rng = np.random.default_rng(seed)
    curves = [
        LtvCurve(channel, BASE + t, rng.uniform(0.1, 5.0, size=length), 10 + t)
        for t in range(num_days)
    ]
    return LtvDataset.from_curves(curves)


class TestWindowSpec:
    def test_l_formula(self):
        assert WindowSpec(m=3, n=2, k=4, s=2).l == 3 + 2 * 3

    def test_paper_scale_geometry(self):
        """The 30-days-in / 330-days-out full-scale setup: l = 209."""
        spec = WindowSpec(m=30, n=330, k=180, s=1)
        assert spec.l == 209
        assert info_length(spec, 0) == 209
        assert info_length(spec, 179) == 30

    def test_rejects_non_positive_dimensions(self):
        for bad in [dict(m=0, n=1, k=1), dict(m=1, n=0, k=1),
                    dict(m=1, n=1, k=0), dict(m=1, n=1, k=1, s=0)]:
            with pytest.raises(InvalidConfig):
                WindowSpec(**bad)
        with pytest.raises(InvalidConfig):
            WindowSpec(m=1.5, n=1, k=1)

    def test_info_length_bounds(self):
        spec = WindowSpec(m=2, n=1, k=3)
        with pytest.raises(OutOfRange):
            info_length(spec, 3)
        with pytest.raises(OutOfRange):
            info_length(spec, -1)

    def test_prefix_lengths(self):
        np.testing.assert_array_equal(prefix_lengths(WindowSpec(m=2, n=1, k=3, s=2)),
                                      [0, 2, 4])


class TestBuildWindowOracle:
    def test_brute_force_equivalence_randomized(self):
        """input[p, j] equals the curve value at retention day p - s*j
        (or zero before activation) over randomized geometries."""
        rng = np.random.default_rng(7)
        ds = channel_dataset(num_days=25, length=30)
        checked = 0
        for _ in range(220):
            m = int(rng.integers(1, 6))
            s = int(rng.integers(1, 4))
            k = int(rng.integers(1, 7))
            n = int(rng.integers(1, 5))
            spec = WindowSpec(m=m, n=n, k=k, s=s)
            start = BASE + int(rng.integers(0, 25 - s * (k - 1)))
            try:
                window = build_window(ds, "ch00", start, spec, with_target=True)
            except InsufficientHistory:
                continue
            for j in range(k):
                curve = ds.get("ch00", start + s * j)
                for p in range(spec.l):
                    r = p - s * j
                    expected = 0.0 if r < 0 else curve.values[r]
                    assert window.input[p, j] == expected
                info = info_length(spec, j)
                for h in range(n):
                    assert window.target[h, j] == curve.values[info + h]
            checked += 1
        assert checked >= 200

    def test_prefix_zeros_are_exact(self):
        spec = WindowSpec(m=2, n=1, k=3, s=2)
        ds = channel_dataset(num_days=10, length=20)
        window = build_window(ds, "ch00", BASE, spec)
        for j in range(spec.k):
            np.testing.assert_array_equal(window.input[: spec.s * j, j], 0.0)

    def test_columns_share_target_calendar_days(self):
        """Targets are date-aligned: column j's target day h is calendar
        day start + l + h regardless of j."""
        spec = WindowSpec(m=3, n=4, k=3, s=2)
        ds = channel_dataset(num_days=12, length=30)
        window = build_window(ds, "ch00", BASE, spec, with_target=True)
        for j in range(spec.k):
            curve = ds.get("ch00", BASE + spec.s * j)
            for h in range(spec.n):
                calendar_day = BASE + spec.l + h
                retention = calendar_day - curve.activation
                assert window.target[h, j] == curve.values[retention]

    def test_missing_curve(self):
        ds = channel_dataset(num_days=5)
        with pytest.raises(MissingCurve):
            build_window(ds, "ch00", BASE + 4, WindowSpec(m=2, n=1, k=2))
        with pytest.raises(MissingCurve):
            build_window(ds, "nope", BASE, WindowSpec(m=2, n=1, k=2))

    def test_insufficient_history(self):
        ds = channel_dataset(num_days=5, length=3)
        with pytest.raises(InsufficientHistory):
            build_window(ds, "ch00", BASE, WindowSpec(m=2, n=2, k=2), with_target=True)

    def test_newest_column_properties(self):
        spec = WindowSpec(m=3, n=2, k=4, s=1)
        ds = channel_dataset(num_days=10, length=20)
        window = build_window(ds, "ch00", BASE, spec)
        assert window.newest_activation == BASE + 3
        newest = ds.get("ch00", BASE + 3)
        np.testing.assert_array_equal(window.newest_prefix, newest.values[:3])
        col, tgt = last_column_view(window)
        np.testing.assert_array_equal(col, window.input[:, -1])
        assert tgt is None


class TestEnumerateWindows:
    def test_counts_and_order(self):
        ds = channel_dataset(num_days=10, length=40)
        spec = WindowSpec(m=3, n=4, k=3, s=1)
        windows, skipped = enumerate_windows(ds, spec, with_target=True)
        # start days 0..7 have all three curves; 8 and 9 run off the end
        assert len(windows) == 8
        assert skipped == 2
        starts = [w.start_day for w in windows]
        assert starts == sorted(starts)

    def test_channel_order_is_lexicographic(self):
        curves = []
        rng = np.random.default_rng(1)
        for channel in ("zeta", "alpha"):
            for t in range(4):
                curves.append(LtvCurve(channel, BASE + t, rng.uniform(0.1, 1, 8), 5))
        ds = LtvDataset.from_curves(curves)
        windows, _ = enumerate_windows(ds, WindowSpec(m=2, n=1, k=2))
        assert [w.channel for w in windows] == ["alpha"] * 3 + ["zeta"] * 3


class TestDumpFormat:
    def test_header_and_rows(self, tmp_path):
        spec = WindowSpec(m=2, n=3, k=2, s=1)
        ds = channel_dataset(num_days=6, length=20)
        window = build_window(ds, "ch00", BASE, spec)
        path = tmp_path / "window.tsv"
        dump_window(window, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# ch00,2024-01-01,m=2,n=3,k=2,s=1"
        assert len(lines) == 1 + spec.l
        parsed = np.array([[float(v) for v in line.split("\t")] for line in lines[1:]])
        np.testing.assert_array_equal(parsed, window.input)
