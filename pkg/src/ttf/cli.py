"""Command-line pipeline: generate, train, approve, predict, evaluate,
ablate, monitor, rollback.

All commands operate on an artifact hub directory (``--out``, default
``./ttf-hub``).  Options beyond the command line come from a JSON file
passed with ``--config``.  Every mutating command runs under the hub
lock.  Errors print one machine-readable JSON record to stderr and exit
non-zero; results print as ``key=value`` lines on stdout so scripts can
scrape them.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields as dataclass_fields
from pathlib import Path

from . import __version__
from .domain import HolidayCalendar, dataset_to_csv, format_date, parse_date
from .errors import InvalidConfig, TtfError, UnknownVersion
from .estimator import TtfForecaster
from .evaluation import (
    PredictionRecord,
    evaluate_records,
    holdout_cohorts,
    cohort_records,
    run_ablation,
)
from .hub import Hub
from .model import MtFusionNet
from .synthdata import GeneratorConfig, default_calendar, describe, format_describe, generate


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise InvalidConfig("config file must hold a JSON object")
    return data


def _pick(config: dict, allowed: set[str], what: str) -> dict:
    unknown = set(config) - allowed
    if unknown:
        raise InvalidConfig(f"unknown {what} config keys: {sorted(unknown)}")
    return config


def _emit(**kv) -> None:
    for key, value in kv.items():
        print(f"{key}={value}")


# -- subcommands --------------------------------------------------------------


def cmd_generate(hub: Hub, args) -> None:
    allowed = {f.name for f in dataclass_fields(GeneratorConfig)} | {"holidays"}
    config = _pick(_load_config(args.config), allowed, "generator")
    holidays = config.pop("holidays", None)
    for tuple_key in ("base_value_range", "decay_exponent_range", "user_count_range"):
        if tuple_key in config:
            config[tuple_key] = tuple(config[tuple_key])
    if args.seed is not None:
        config["seed"] = args.seed
    gen_config = GeneratorConfig(**config)
    if holidays is None:
        calendar = default_calendar()
    else:
        calendar = HolidayCalendar(parse_date(d) for d in holidays)
    dataset = generate(gen_config, calendar)

    calendar_text = "".join(
        format_date(ordinal) + "\n" for ordinal in sorted(calendar.ordinals())
    )
    provenance = {
        k: list(v) if isinstance(v, tuple) else v
        for k, v in asdict(gen_config).items()
    }
    with hub.lock():
        version = hub.publish_dataset(
            dataset_to_csv(dataset).encode(),
            calendar_text.encode(),
            provenance={"generator": provenance},
        )
    sys.stdout.write(format_describe(describe(dataset)))
    _emit(dataset_version=version)


def _forecaster_params(config: dict, seed: int | None) -> dict:
    allowed = set(TtfForecaster().get_params())
    params = _pick(dict(config), allowed | {"train_cutoff"}, "forecaster")
    params.pop("train_cutoff", None)
    if seed is not None:
        params["seed"] = seed
    return params


def cmd_train(hub: Hub, args) -> None:
    if not args.dataset_version:
        raise InvalidConfig("train requires --dataset-version")
    config = _load_config(args.config)
    train_cutoff = config.get("train_cutoff")
    params = _forecaster_params(config, args.seed)
    dataset = hub.load_dataset(args.dataset_version)
    forecaster = TtfForecaster(**params)
    forecaster.fit(dataset, train_cutoff=train_cutoff)
    report = forecaster.report_
    extras = {
        "channels": forecaster.channels_ or [],
        "dataset_version": args.dataset_version,
        "forecaster_params": {k: list(v) if isinstance(v, tuple) else v
                              for k, v in forecaster.get_params().items()},
    }
    artifact = forecaster.model_.to_bytes(extras)
    with hub.lock():
        version = hub.register_model(artifact, meta={
            "dataset_version": args.dataset_version,
            "best_val_loss": report.best_val_loss,
            "best_epoch": report.best_epoch,
            "epochs_run": report.epochs_run,
            "num_params": forecaster.model_.num_params,
        })
        entry = hub.model_path(version)
        (entry / "train_report.txt").write_text(report.to_text(), encoding="utf-8")
        (entry / "train_report.csv").write_text(report.to_csv(), encoding="utf-8")
    sys.stdout.write(report.to_text())
    _emit(model_version=version, status="candidate")


def cmd_approve(hub: Hub, args) -> None:
    if not args.model_version:
        raise InvalidConfig("approve requires --model-version")
    with hub.lock():
        hub.approve(args.model_version)
    _emit(model_version=args.model_version, status="approved",
          active_model=hub.active_model())


def _load_hub_model(hub: Hub, version: str):
    model, extras = MtFusionNet.from_bytes(hub.load_model_bytes(version))
    channels = extras.get("channels") or None
    return model, channels, extras


def cmd_predict(hub: Hub, args) -> None:
    if not args.dataset_version:
        raise InvalidConfig("predict requires --dataset-version")
    model_version = args.model_version or hub.active_model()
    if not model_version:
        raise UnknownVersion("no --model-version given and no model is being served")
    model, channels, _ = _load_hub_model(hub, model_version)
    dataset = hub.load_dataset(args.dataset_version)
    spec = model.config.spec
    cohorts = {
        channel: [a for a in dataset.activations(channel)
                  if len(dataset.get(channel, a)) >= spec.m]
        for channel in dataset.channels()
    }
    records = cohort_records(model, dataset, cohorts, channels=channels)
    with hub.lock():
        version = hub.record_predictions(records, model_version,
                                         args.dataset_version, __version__)
    _emit(prediction_version=version, model_version=model_version,
          dataset_version=args.dataset_version, code_version=__version__,
          records=len(records))


def cmd_evaluate(hub: Hub, args) -> None:
    config = _pick(_load_config(args.config),
                   {"prediction_version", "n_total"}, "evaluate")
    prediction_version = config.get("prediction_version")
    if not prediction_version:
        # default: newest batch, optionally filtered by --model-version
        batches = [e for e in hub.read_events() if e["kind"] == "predict"
                   and (not args.model_version
                        or e["model_version"] == args.model_version)]
        if not batches:
            raise UnknownVersion("no prediction batch found to evaluate")
        prediction_version = batches[-1]["prediction_version"]
    rows = hub.load_prediction_rows(prediction_version)
    batch_meta = json.loads(
        (hub.prediction_path(prediction_version) / "meta.json").read_text()
    )
    dataset_version = args.dataset_version or batch_meta["dataset_version"]
    dataset = hub.load_dataset(dataset_version)

    by_cohort: dict[tuple[str, int], list] = {}
    for row in rows:
        key = (row["channel_id"], parse_date(row["activation_date"]))
        by_cohort.setdefault(key, []).append(
            (int(row["retention_day"]), float(row["predicted_ltv"]))
        )
    records = []
    for (channel, activation), points in sorted(by_cohort.items()):
        points.sort()
        days = [d for d, _ in points]
        m, n = days[0], len(days)
        if days != list(range(m, m + n)):
            raise InvalidConfig(
                f"prediction batch rows for ({channel}) are not a contiguous horizon"
            )
        curve = dataset.get(channel, activation)
        if curve is None or len(curve) < m + n:
            continue  # actuals not realized yet
        records.append(PredictionRecord(
            channel=channel,
            activation=activation,
            predicted=[v for _, v in points],
            actual=curve.values[m:m + n],
            user_count=curve.user_count,
            observed_prefix=curve.values[:m],
        ))
    report = evaluate_records(records, n_total=int(config.get("n_total", 360)),
                              fingerprint=prediction_version)
    entry = hub.prediction_path(prediction_version)
    (entry / "eval_report.txt").write_text(report.to_text(), encoding="utf-8")
    (entry / "eval_report.csv").write_text(report.to_csv(), encoding="utf-8")
    sys.stdout.write(report.to_text())
    _emit(prediction_version=prediction_version, mape_p=repr(report.mape_p),
          mape_a=repr(report.mape_a), scored_records=report.record_count)


def cmd_ablate(hub: Hub, args) -> None:
    if not args.dataset_version:
        raise InvalidConfig("ablate requires --dataset-version")
    config = _pick(_load_config(args.config),
                   {"grid", "base", "seeds", "holdout_fraction", "n_total"}, "ablation")
    if "grid" not in config:
        raise InvalidConfig('ablation config needs a "grid": [[label, {overrides}], ...]')
    grid = [(str(label), dict(overrides)) for label, overrides in config["grid"]]
    seeds = config.get("seeds", [args.seed if args.seed is not None else 0])
    dataset = hub.load_dataset(args.dataset_version)
    rows, table = run_ablation(
        grid, dataset,
        base_params=config.get("base"),
        seeds=tuple(int(s) for s in seeds),
        holdout_fraction=float(config.get("holdout_fraction", 0.2)),
        n_total=int(config.get("n_total", 360)),
    )
    reports = hub.root / "reports"
    reports.mkdir(exist_ok=True)
    out_path = reports / f"ablation-{args.dataset_version}.txt"
    out_path.write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    _emit(ablation_table=out_path, cells=len(rows))


def cmd_monitor(hub: Hub, args) -> None:
    config = _pick(_load_config(args.config), {"start_date", "baseline"}, "monitor")
    with hub.lock():
        if "start_date" in config:
            hub.init_clock(config["start_date"])
        if args.baseline is not None:
            hub.set_baseline(args.baseline)
        elif "baseline" in config:
            hub.set_baseline(float(config["baseline"]))
        decisions = []
        for item in args.observe or []:
            date_text, _, value_text = item.partition("=")
            if not value_text:
                raise InvalidConfig(
                    f"--observe expects DATE=MAPE_P, got {item!r}"
                )
            decision, note = hub.observe_metric(date_text, float(value_text))
            decisions.append((date_text, decision, note))
        fired = []
        if args.advance_days:
            fired = hub.advance_clock(args.advance_days)
    clock = hub.read_clock()
    for date_text, decision, note in decisions:
        print(f"{date_text}: {decision} ({note})")
    for event in fired:
        print(f"{event['day']}: {event['kind']}")
    _emit(clock_day=format_date(clock["day"]) if clock else "-",
          retrain_events=len(fired),
          last_decision=decisions[-1][1] if decisions else "-")


def cmd_rollback(hub: Hub, args) -> None:
    if not args.model_version:
        raise InvalidConfig("rollback requires --model-version")
    with hub.lock():
        active = hub.rollback(args.model_version)
    _emit(active_model=active)


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "approve": cmd_approve,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "monitor": cmd_monitor,
    "rollback": cmd_rollback,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttf",
        description="Channel-level LTV forecasting pipeline over a local artifact hub.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON options file for the command")
    parser.add_argument("--dataset-version", help="dataset hub version id")
    parser.add_argument("--model-version", help="model hub version id")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--out", default="ttf-hub", help="hub root directory")
    parser.add_argument("--advance-days", type=int, default=0,
                        help="monitor: advance the simulated clock")
    parser.add_argument("--baseline", type=float,
                        help="monitor: set the drift baseline mape_p")
    parser.add_argument("--observe", action="append", metavar="DATE=MAPE_P",
                        help="monitor: record one realized daily metric")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        hub = Hub(Path(args.out))
        COMMANDS[args.command](hub, args)
    except TtfError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "OSError", "message": str(exc)}, sort_keys=True),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
