"""User-count-weighted forecast quality metrics and the ablation harness.

Per forecast cohort (one channel x activation date) a PredictionRecord
holds the m observed prefix days, the n predicted horizon days
(retention days m .. m+n-1) and, once known, the same-shape actuals.

Two aggregate views:

* ``mape_p`` - pointwise: per-record MAPE over the horizon entries,
  user-count-weighted across records.  Entries whose actual is below
  ``EPS`` (1e-9) are excluded from the pointwise mean and counted.
* ``mape_a`` - aggregate: relative error of cumulative LTV at day
  N_eff = min(n_total, m + n), where the observed prefix contributes to
  both sides and only the horizon part is predicted.

The ground truth is always the denominator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covariates import build_bundle
from .domain import LtvDataset, format_date
from .errors import (
    AllEntriesDegenerate,
    DegenerateActual,
    EmptyInput,
    InsufficientHistory,
    InvalidConfig,
    MissingCurve,
)
from .trapezoid import build_window

EPS = 1e-9


@dataclass(frozen=True)
class PredictionRecord:
    channel: str
    activation: int  # day ordinal of the forecast cohort
    predicted: np.ndarray  # (n,) retention days m .. m+n-1
    actual: np.ndarray | None  # same shape, None until actuals arrive
    user_count: int
    observed_prefix: np.ndarray  # (m,) retention days 0 .. m-1

    def __post_init__(self):
        predicted = np.asarray(self.predicted, dtype=np.float64)
        prefix = np.asarray(self.observed_prefix, dtype=np.float64)
        object.__setattr__(self, "predicted", predicted)
        object.__setattr__(self, "observed_prefix", prefix)
        if self.actual is not None:
            actual = np.asarray(self.actual, dtype=np.float64)
            if actual.shape != predicted.shape:
                raise InvalidConfig(
                    f"actual shape {actual.shape} != predicted {predicted.shape}"
                )
            object.__setattr__(self, "actual", actual)
        if self.user_count < 1:
            raise InvalidConfig("user_count must be >= 1")

    @property
    def m(self) -> int:
        return self.observed_prefix.size

    @property
    def n(self) -> int:
        return self.predicted.size


def mape_with_exclusions(pred, actual) -> tuple[float, int]:
    """Pointwise MAPE and the number of near-zero-actual entries skipped."""
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape or pred.ndim != 1 or pred.size == 0:
        raise InvalidConfig(f"need equal-length 1-d sequences, got {pred.shape}/{actual.shape}")
    keep = np.abs(actual) >= EPS
    excluded = int(np.sum(~keep))
    if excluded == pred.size:
        raise AllEntriesDegenerate("every actual entry is below the zero threshold")
    value = float(np.mean(np.abs(pred[keep] - actual[keep]) / np.abs(actual[keep])))
    return value, excluded


def mape(pred, actual) -> float:
    """Mean of |pred - actual| / |actual| with near-zero actuals excluded."""
    return mape_with_exclusions(pred, actual)[0]


def _require_scored(records) -> list[PredictionRecord]:
    records = list(records)
    if not records:
        raise EmptyInput("no prediction records")
    for r in records:
        if r.actual is None:
            raise EmptyInput(
                f"record ({r.channel}, {format_date(r.activation)}) has no actuals yet"
            )
    return records


def mape_p(records) -> float:
    """User-count-weighted mean of per-record pointwise MAPEs."""
    records = _require_scored(records)
    weights = np.array([r.user_count for r in records], dtype=np.float64)
    values = np.array([mape(r.predicted, r.actual) for r in records])
    return float(np.sum(weights * values) / np.sum(weights))


def _ltv_totals(record: PredictionRecord, n_total: int) -> tuple[float, float]:
    """(predicted, actual) cumulative LTV at day N_eff = min(n_total, m + n)."""
    n_eff = min(n_total, record.m + record.n)
    prefix = float(record.observed_prefix[: min(record.m, n_eff)].sum())
    horizon = max(n_eff - record.m, 0)
    return (
        prefix + float(record.predicted[:horizon].sum()),
        prefix + float(record.actual[:horizon].sum()),
    )


def mape_a(records, n_total: int = 360) -> float:
    """User-count-weighted relative error of cumulative LTV at day N_eff."""
    if n_total < 1:
        raise InvalidConfig("n_total must be >= 1")
    records = _require_scored(records)
    weights = []
    values = []
    for r in records:
        predicted, actual = _ltv_totals(r, n_total)
        if actual <= EPS:
            raise DegenerateActual(
                f"cumulative actual LTV of ({r.channel}, {format_date(r.activation)}) "
                f"is {actual}; MAPE undefined"
            )
        weights.append(r.user_count)
        values.append(abs(predicted - actual) / actual)
    weights = np.asarray(weights, dtype=np.float64)
    return float(np.sum(weights * np.asarray(values)) / np.sum(weights))


# --- report --------------------------------------------------------------------


@dataclass
class ChannelBreakdown:
    records: int
    users: int
    mape_p: float
    mape_a: float
    excluded_entries: int


@dataclass
class EvalReport:
    mape_p: float
    mape_a: float
    record_count: int
    excluded_entries: int
    per_channel: dict[str, ChannelBreakdown] = field(default_factory=dict)
    fingerprint: str = ""
    n_total: int = 360

    def to_text(self) -> str:
        lines = [
            "evaluation report",
            "=================",
            f"records           : {self.record_count}",
            f"mape_p            : {self.mape_p:.6f}",
            f"mape_a (N={self.n_total})    : {self.mape_a:.6f}",
            f"excluded entries  : {self.excluded_entries}",
            f"fingerprint       : {self.fingerprint or '-'}",
            "",
            "per channel:",
        ]
        for channel in sorted(self.per_channel):
            b = self.per_channel[channel]
            lines.append(
                f"  {channel}: records={b.records} users={b.users} "
                f"mape_p={b.mape_p:.6f} mape_a={b.mape_a:.6f} excluded={b.excluded_entries}"
            )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["channel,records,users,mape_p,mape_a,excluded_entries"]
        for channel in sorted(self.per_channel):
            b = self.per_channel[channel]
            rows.append(
                f"{channel},{b.records},{b.users},{b.mape_p!r},{b.mape_a!r},{b.excluded_entries}"
            )
        rows.append(
            f"ALL,{self.record_count},"
            f"{sum(b.users for b in self.per_channel.values())},"
            f"{self.mape_p!r},{self.mape_a!r},{self.excluded_entries}"
        )
        return "\n".join(rows) + "\n"


def evaluate_records(records, n_total: int = 360, fingerprint: str = "") -> EvalReport:
    """Aggregate records into an EvalReport with per-channel breakdowns.

    The overall metrics recompose exactly from the per-channel ones as a
    user-count-weighted combination (same weights, same records).
    """
    records = _require_scored(records)
    per_channel: dict[str, ChannelBreakdown] = {}
    by_channel: dict[str, list[PredictionRecord]] = {}
    for r in records:
        by_channel.setdefault(r.channel, []).append(r)
    total_excluded = 0
    for channel in sorted(by_channel):
        rs = by_channel[channel]
        excluded = sum(mape_with_exclusions(r.predicted, r.actual)[1] for r in rs)
        total_excluded += excluded
        per_channel[channel] = ChannelBreakdown(
            records=len(rs),
            users=int(sum(r.user_count for r in rs)),
            mape_p=mape_p(rs),
            mape_a=mape_a(rs, n_total),
            excluded_entries=excluded,
        )
    return EvalReport(
        mape_p=mape_p(records),
        mape_a=mape_a(records, n_total),
        record_count=len(records),
        excluded_entries=total_excluded,
        per_channel=per_channel,
        fingerprint=fingerprint,
        n_total=n_total,
    )


def write_plot_data(record: PredictionRecord, path) -> None:
    """Per-cohort plot file: retention_day,actual,predicted (horizon days)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("retention_day,actual,predicted\n")
        for i in range(record.n):
            actual = "" if record.actual is None else repr(float(record.actual[i]))
            fh.write(f"{record.m + i},{actual},{repr(float(record.predicted[i]))}\n")


# --- forecast-cohort protocol ----------------------------------------------------


def holdout_cohorts(dataset: LtvDataset, m: int, n: int, fraction: float) -> dict[str, list[int]]:
    """Per channel, the most recent `fraction` of activations usable as
    evaluation cohorts (each needs m observed days to forecast from and
    m+n days total so actuals exist)."""
    if not 0.0 < fraction < 1.0:
        raise InvalidConfig("fraction must be in (0, 1)")
    out: dict[str, list[int]] = {}
    for channel in dataset.channels():
        feasible = [
            a for a in dataset.activations(channel)
            if len(dataset.get(channel, a)) >= m + n
        ]
        if not feasible:
            continue
        count = int(np.ceil(fraction * len(feasible)))
        out[channel] = feasible[len(feasible) - count:]
    return out


def cohort_records(model, dataset: LtvDataset, cohorts: dict[str, list[int]],
                   channels: list[str] | None = None) -> list[PredictionRecord]:
    """Forecast each cohort with its trapezoid window and attach actuals.

    A cohort (channel, a) is forecast from the window whose newest column
    is the cohort's curve truncated to its first m days; older sibling
    curves fill the other columns.  Cohorts whose window cannot be built
    (missing siblings) are skipped.
    """
    spec = model.config.spec
    vocab = channels
    if vocab is None and model.config.c_sta:
        vocab = dataset.channels()
    records: list[PredictionRecord] = []
    for channel in sorted(cohorts):
        for a in cohorts[channel]:
            curve = dataset.get(channel, a)
            if curve is None:
                raise MissingCurve(f"no curve ({channel}, {format_date(a)})")
            start = a - spec.s * (spec.k - 1)
            try:
                window = build_window(dataset, channel, start, spec)
            except (MissingCurve, InsufficientHistory):
                continue
            bundle = build_bundle(window, vocab, dataset.calendar,
                                  dynamic=model.config.c_dyn > 0)
            pred = model.forward_window(window, bundle)[:, -1]
            actual = None
            if len(curve) >= spec.m + spec.n:
                actual = curve.values[spec.m:spec.m + spec.n]
            records.append(
                PredictionRecord(
                    channel=channel,
                    activation=a,
                    predicted=pred,
                    actual=actual,
                    user_count=curve.user_count,
                    observed_prefix=curve.values[:spec.m],
                )
            )
    return records


# --- ablation harness ------------------------------------------------------------


def run_ablation(grid: list[tuple[str, dict]], dataset: LtvDataset,
                 base_params: dict | None = None, seeds=(0,),
                 holdout_fraction: float = 0.2, n_total: int = 360):
    """Train/evaluate one forecaster per grid cell under a shared protocol.

    `grid` is a list of (label, param overrides); every cell uses the same
    holdout cohorts, seeds and base parameters.  Returns (rows, table)
    where rows are dicts {label, seed, mape_p, mape_a} and table is the
    aligned plaintext comparison (per-seed metrics plus the seed mean).
    """
    from .estimator import TtfForecaster  # deferred: estimator imports this module

    if not grid:
        raise EmptyInput("empty ablation grid")
    base = dict(base_params or {})
    probe = TtfForecaster(**base)
    cohorts = holdout_cohorts(dataset, probe.m, probe.n, holdout_fraction)
    cutoff = min(min(days) for days in cohorts.values())
    rows = []
    for label, overrides in grid:
        for seed in seeds:
            params = {**base, **overrides, "seed": int(seed)}
            forecaster = TtfForecaster(**params)
            if forecaster.m != probe.m or forecaster.n != probe.n:
                raise InvalidConfig("ablation cells must share m and n for comparability")
            forecaster.fit(dataset, train_cutoff=cutoff)
            records = cohort_records(forecaster.model_, dataset, cohorts,
                                     channels=forecaster.channels_)
            report = evaluate_records(records, n_total=n_total, fingerprint=label)
            rows.append({"label": label, "seed": int(seed),
                         "mape_p": report.mape_p, "mape_a": report.mape_a})
    return rows, format_ablation_table(rows)


def format_ablation_table(rows) -> str:
    """Aligned plaintext table: one line per variant, per-seed and mean metrics."""
    labels = []
    for row in rows:
        if row["label"] not in labels:
            labels.append(row["label"])
    seeds = sorted({row["seed"] for row in rows})
    header = ["variant"]
    for s in seeds:
        header += [f"mape_p[s{s}]", f"mape_a[s{s}]"]
    header += ["mape_p[mean]", "mape_a[mean]"]
    table = [header]
    for label in labels:
        cells = [label]
        ps, as_ = [], []
        for s in seeds:
            row = next(r for r in rows if r["label"] == label and r["seed"] == s)
            cells += [f"{row['mape_p']:.4f}", f"{row['mape_a']:.4f}"]
            ps.append(row["mape_p"])
            as_.append(row["mape_a"])
        cells += [f"{np.mean(ps):.4f}", f"{np.mean(as_):.4f}"]
        table.append(cells)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for idx, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
