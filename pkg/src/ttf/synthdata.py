"""Synthetic channel-level LTV corpus with known ground-truth structure.

Each channel gets its own base level, power-law decay exponent and weekly
phase.  On top of that sit calendar effects shared in *form* across
channels (weekly seasonality, holiday boost), channel-specific persistent
level drifts (a coin flip per channel-month), and multiplicative

log-normal observation noise:

    value(c, t, i) = base_c * (i+1)^(-beta_c)
                     * weekly_c(t+i) * holiday(t+i) * drift_c(t+i)
                     * exp(volatility * z)

where t is the activation day, i the retention day, and z ~ N(0, 1).

Randomness is organized so experiments stay comparable: the seed feeds a
`SeedSequence` that spawns one child per channel, and each channel child
spawns four dedicated streams (parameters, drift, noise, user counts).
Changing `volatility` or the calendar therefore never shifts any other
channel's draws, and adding channels never perturbs existing ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date

import numpy as np

from .domain import HolidayCalendar, LtvCurve, LtvDataset, parse_date
from .errors import InvalidConfig


@dataclass(frozen=True)
class GeneratorConfig:
    num_channels: int = 6
    start_date: str = "2024-01-01"
    num_days: int = 900  # distinct activation dates per channel (~30 months)
    curve_length: int = 90  # observed retention days per curve
    seed: int = 0
    volatility: float = 0.1
    weekly_amplitude: float = 0.2
    holiday_boost: float = 0.3
    drift_prob: float = 0.1
    base_value_range: tuple[float, float] = (0.5, 5.0)
    decay_exponent_range: tuple[float, float] = (0.4, 1.2)
    user_count_range: tuple[int, int] = (50, 500)

    def __post_init__(self):
        if self.num_channels < 1 or self.num_days < 1 or self.curve_length < 1:
            raise InvalidConfig("num_channels, num_days and curve_length must be >= 1")
        if self.volatility < 0 or self.weekly_amplitude < 0:
            raise InvalidConfig("volatility and weekly_amplitude must be >= 0")
        if self.holiday_boost <= -1:
            raise InvalidConfig("holiday_boost must be > -1 (factor must stay positive)")
        if not 0.0 <= self.drift_prob <= 1.0:
            raise InvalidConfig("drift_prob must be in [0, 1]")
        for lo, hi, what in [
            (*self.base_value_range, "base_value_range"),
            (*self.decay_exponent_range, "decay_exponent_range"),
            (*self.user_count_range, "user_count_range"),
        ]:
            if lo > hi or lo <= 0:
                raise InvalidConfig(f"{what} must satisfy 0 < lo <= hi, got ({lo}, {hi})")


def default_calendar(years=(2024, 2025, 2026)) -> HolidayCalendar:
    """Fixed-date holidays (new year, independence day, christmas span)."""
    days = []
    for y in years:
        for month, day in [(1, 1), (7, 4), (12, 24), (12, 25), (12, 31)]:
            days.append(date(y, month, day).toordinal())
    return HolidayCalendar(frozenset(days))


def _month_key(ordinal: int) -> tuple[int, int]:
    d = date.fromordinal(ordinal)
    return (d.year, d.month)


def _day_factors(cfg: GeneratorConfig, span_start: int, span_len: int,
                 phase: float, calendar: HolidayCalendar, drift_rng) -> np.ndarray:
    """Per-calendar-day multiplier: weekly * holiday * cumulative drift."""
    ordinals = span_start + np.arange(span_len)
    weekday = (ordinals - 1) % 7  # matches datetime.date.weekday(): 0 = Monday
    weekly = np.exp(cfg.weekly_amplitude * np.sin(2.0 * np.pi * weekday / 7.0 + phase))
    holiday = np.where(
        [o in calendar for o in ordinals], 1.0 + cfg.holiday_boost, 1.0
    )
    # Persistent level shifts: one coin flip per channel-month; once a shift
    # lands it stays in effect for the rest of the horizon.  Both draws are
    # consumed every month so raising drift_prob only adds shifts, it never
    # reshuffles which factor a given month would get.
    months = sorted({_month_key(int(o)) for o in ordinals})
    level = 1.0
    month_level = {}
    for mk in months:
        flip = drift_rng.random()
        factor = drift_rng.uniform(0.7, 1.4)
        if flip < cfg.drift_prob:
            level *= factor
        month_level[mk] = level
    drift = np.array([month_level[_month_key(int(o))] for o in ordinals])
    return weekly * holiday * drift


def generate(cfg: GeneratorConfig, calendar: HolidayCalendar | None = None) -> LtvDataset:
    """Build the synthetic dataset; `calendar` defaults to no holidays."""
    if calendar is None:
        calendar = HolidayCalendar(frozenset())
    start = parse_date(cfg.start_date)
    span_len = cfg.num_days + cfg.curve_length  # covers every t + i
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.num_channels)
    curves = []
    for c in range(cfg.num_channels):
        param_ss, drift_ss, noise_ss, user_ss = children[c].spawn(4)
        param_rng = np.random.default_rng(param_ss)
        base = param_rng.uniform(*cfg.base_value_range)
        beta = param_rng.uniform(*cfg.decay_exponent_range)
        phase = param_rng.uniform(0.0, 2.0 * np.pi)
        factors = _day_factors(cfg, start, span_len, phase, calendar,
                               np.random.default_rng(drift_ss))
        decay = base * np.power(np.arange(1, cfg.curve_length + 1, dtype=np.float64), -beta)
        noise = np.exp(
            cfg.volatility
            * np.random.default_rng(noise_ss).standard_normal((cfg.num_days, cfg.curve_length))
        )
        users = np.random.default_rng(user_ss).integers(
            cfg.user_count_range[0], cfg.user_count_range[1] + 1, size=cfg.num_days
        )
        channel = f"ch{c:02d}"
        offsets = np.arange(cfg.curve_length)
        for t in range(cfg.num_days):
            values = decay * factors[t + offsets] * noise[t]
            curves.append(
                LtvCurve(channel=channel, activation=start + t,
                         values=values, user_count=int(users[t]))
            )
    return LtvDataset.from_curves(curves, calendar=calendar)


def describe(dataset: LtvDataset) -> dict:
    """Summary-statistics record: counts, spans, magnitudes, dispersion.

    The coefficient of variation (std/mean over all curve values) is the
    headline dispersion number; a noisier corpus must score higher here.
    """
    per_channel = {}
    pooled = []
    for channel in dataset.channels():
        activations = dataset.activations(channel)
        values = np.concatenate(
            [dataset.get(channel, a).values for a in activations]
        )
        pooled.append(values)
        lengths = [len(dataset.get(channel, a)) for a in activations]
        mean = float(values.mean())
        per_channel[channel] = {
            "curves": len(activations),
            "first_activation": date.fromordinal(min(activations)).isoformat(),
            "last_activation": date.fromordinal(max(activations)).isoformat(),
            "min_length": min(lengths),
            "max_length": max(lengths),
            "mean_value": mean,
            "median_value": float(np.median(values)),
            "cov": float(values.std() / mean) if mean else 0.0,
        }
    if pooled:
        flat = np.concatenate(pooled)
        mean = float(flat.mean())
        overall_mean, overall_median = mean, float(np.median(flat))
        overall_cov = float(flat.std() / mean) if mean else 0.0
    else:
        overall_mean = overall_median = overall_cov = 0.0
    return {
        "num_channels": len(dataset.channels()),
        "total_curves": sum(c["curves"] for c in per_channel.values()),
        "holidays": len(dataset.calendar) if dataset.calendar else 0,
        "overall_mean": overall_mean,
        "overall_median": overall_median,
        "overall_cov": overall_cov,
        "channels": per_channel,
    }


def format_describe(summary: dict) -> str:
    """Plaintext rendering of a describe() record for CLI output."""
    lines = ["synthetic dataset", "================="]
    for channel, c in summary["channels"].items():
        lines.append(
            f"{channel}: {c['curves']} curves, activations "
            f"{c['first_activation']}..{c['last_activation']}, "
            f"length {c['min_length']}..{c['max_length']}, "
            f"mean {c['mean_value']:.3f}, median {c['median_value']:.3f}, "
            f"cov {c['cov']:.3f}"
        )
    lines.append(f"total curves: {summary['total_curves']}")
    lines.append(f"holidays in calendar: {summary['holidays']}")
    lines.append(f"overall cov: {summary['overall_cov']:.3f}")
    return "\n".join(lines) + "\n"
