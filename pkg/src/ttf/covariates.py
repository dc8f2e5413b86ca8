"""Static and dynamic covariates for a window.

Static: a one-hot of the window's channel.  Dynamic: bounded calendar
features per day - sin/cos pairs for day-of-week, day-of-month,
month-of-year and day-of-year, plus a holiday flag - computed for the
input days (past) and the forecast days (future).  Calendar effects on
the horizon are known ahead of time, which is the whole point of
feeding the future segment.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .domain import HolidayCalendar
from .trapezoid import TrapezoidWindow

DYNAMIC_WIDTH = 9  # 4 sin/cos pairs + holiday flag


@dataclass(frozen=True)
class CovariateBundle:
    static: np.ndarray  # (C_sta,)
    dyn_past: np.ndarray  # (l, C_dyn)
    dyn_future: np.ndarray  # (n, C_dyn)

    @classmethod
    def empty(cls, l: int, n: int) -> "CovariateBundle":
        return cls(np.zeros(0), np.zeros((l, 0)), np.zeros((n, 0)))


def time_features(ordinals: np.ndarray, calendar: HolidayCalendar | None) -> np.ndarray:
    """(len(ordinals), 9) matrix of calendar features, all entries in [-1, 1]."""
    out = np.empty((len(ordinals), DYNAMIC_WIDTH), dtype=np.float64)
    two_pi = 2.0 * np.pi
    for row, ordinal in enumerate(ordinals):
        day = dt.date.fromordinal(int(ordinal))
        phases = (
            day.weekday() / 7.0,
            (day.day - 1) / 31.0,
            (day.month - 1) / 12.0,
            (day.timetuple().tm_yday - 1) / 366.0,
        )
        for i, phase in enumerate(phases):
            out[row, 2 * i] = np.sin(two_pi * phase)
            out[row, 2 * i + 1] = np.cos(two_pi * phase)
        out[row, 8] = 1.0 if calendar is not None and int(ordinal) in calendar else 0.0
    return out


def channel_one_hot(channel: str, channels: list[str]) -> np.ndarray:
    """One-hot over the model's channel vocabulary; unseen channels map to zeros."""
    vec = np.zeros(len(channels), dtype=np.float64)
    try:
        vec[channels.index(channel)] = 1.0
    except ValueError:
        pass
    return vec


def build_bundle(
    window: TrapezoidWindow,
    channels: list[str] | None,
    calendar: HolidayCalendar | None,
    dynamic: bool = True,
) -> CovariateBundle:
    """Covariates for one window.

    ``channels=None`` gives a zero-width static part; ``dynamic=False``
    gives zero-width calendar parts.  Both off is the fully covariate-free
    bundle.
    """
    spec = window.spec
    static = (
        np.zeros(0) if channels is None else channel_one_hot(window.channel, channels)
    )
    if not dynamic:
        empty = CovariateBundle.empty(spec.l, spec.n)
        return CovariateBundle(static, empty.dyn_past, empty.dyn_future)
    past_days = window.start_day + np.arange(spec.l)
    future_days = window.start_day + spec.l + np.arange(spec.n)
    return CovariateBundle(
        static=static,
        dyn_past=time_features(past_days, calendar),
        dyn_future=time_features(future_days, calendar),
    )
