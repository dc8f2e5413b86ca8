"""Versioned dataset/model/prediction stores and deployment bookkeeping.

Everything is plain directories and files under one root:

    root/
      datasets/<version>/data.csv + calendar.txt + meta.json
      models/<version>/model.bin + meta.json
      predictions/<version>/batch.csv + meta.json
      events.log      append-only, one JSON record per line, seq-numbered
      serving.json    the active-model pointer (written atomically)
      clock.json      simulated calendar for the monitor
      drift.json      drift-detector state
      .lock           advisory lock serializing mutating commands

Version ids are content hashes (first 12 hex chars of sha256 over the
artifact bytes), so re-publishing identical bytes is a no-op yielding
the identical id, and any byte change yields a new id.  Metadata
sidecars are not part of the hash.

The serving pointer follows write-tmp-then-rename discipline: readers
always see either the old or the new pointer, never a torn one.  Every
approve/rollback appends to the event log; replaying the log
reconstructs the active-model history exactly.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .domain import HolidayCalendar, LtvDataset, format_date, load_dataset, parse_date
from .errors import InvalidConfig, NoBaseline, NotApproved, UnknownVersion

PREDICTION_HEADER = (
    "channel_id,activation_date,retention_day,predicted_ltv,"
    "model_version,dataset_version,code_version"
)

DRIFT_WINDOW_DAYS = 7
DRIFT_THRESHOLD = 0.02  # 2 percentage points over baseline, as fractions


def content_version(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:12]


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _write_json(path: Path, payload: dict) -> None:
    _atomic_write(path, (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode())


def _read_json(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class DriftState:
    """Rolling realized-metric window against a frozen baseline."""

    baseline: float | None = None
    window: list[tuple[int, float]] = field(default_factory=list)  # (ordinal, mape_p)

    def to_dict(self) -> dict:
        return {"baseline": self.baseline,
                "window": [[d, v] for d, v in self.window]}

    @classmethod
    def from_dict(cls, data: dict) -> "DriftState":
        return cls(baseline=data.get("baseline"),
                   window=[(int(d), float(v)) for d, v in data.get("window", [])])


def check_drift(state: DriftState, point: tuple[int, float]) -> tuple[str, str]:
    """Append a (day ordinal, realized mape_p) point and decide.

    Returns ("retrain_trigger" | "ok", note).  The trigger fires only on a
    full window whose mean exceeds baseline + 2 percentage points; with
    fewer points the decision is a conservative "ok".
    """
    if state.baseline is None:
        raise NoBaseline("drift baseline not set; record one before monitoring")
    day, value = int(point[0]), float(point[1])
    state.window.append((day, value))
    if len(state.window) > DRIFT_WINDOW_DAYS:
        state.window = state.window[-DRIFT_WINDOW_DAYS:]
    if len(state.window) < DRIFT_WINDOW_DAYS:
        return "ok", f"insufficient window ({len(state.window)}/{DRIFT_WINDOW_DAYS} days)"
    mean = sum(v for _, v in state.window) / len(state.window)
    excess = mean - state.baseline
    if excess > DRIFT_THRESHOLD:
        return "retrain_trigger", (
            f"rolling mean {mean:.4f} exceeds baseline {state.baseline:.4f} "
            f"by {excess * 100:.2f} pp (> {DRIFT_THRESHOLD * 100:.0f} pp)"
        )
    return "ok", f"rolling mean {mean:.4f}, excess {excess * 100:.2f} pp within threshold"


class Hub:
    """Single-writer artifact store with an append-only event log."""

    def __init__(self, root):
        self.root = Path(root)
        for sub in ("datasets", "models", "predictions"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self.events_path = self.root / "events.log"
        self.serving_path = self.root / "serving.json"
        self.clock_path = self.root / "clock.json"
        self.drift_path = self.root / "drift.json"

    # -- locking ------------------------------------------------------------

    def lock(self):
        return _HubLock(self.root / ".lock")

    # -- event log ------------------------------------------------------------

    def append_event(self, kind: str, **payload) -> int:
        events = self.read_events()
        seq = events[-1]["seq"] + 1 if events else 1
        record = {"seq": seq, "kind": kind, "at": _now(), **payload}
        with open(self.events_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        return seq

    def read_events(self) -> list[dict]:
        if not self.events_path.exists():
            return []
        events = []
        with open(self.events_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    events.append(json.loads(line))
        return events

    def replay_active_history(self) -> list[tuple[int, str]]:
        """(seq, model version) for every event that moved the serving pointer."""
        history = []
        for event in self.read_events():
            if event["kind"] in ("approve", "rollback"):
                history.append((event["seq"], event["model_version"]))
        return history

    # -- datasets ---------------------------------------------------------------

    def publish_dataset(self, csv_bytes: bytes, calendar_bytes: bytes = b"",
                        provenance: dict | None = None) -> str:
        digest = hashlib.sha256(csv_bytes + b"\x00" + calendar_bytes).hexdigest()
        version = digest[:12]
        entry = self.root / "datasets" / version
        if not entry.exists():
            entry.mkdir()
            _atomic_write(entry / "data.csv", csv_bytes)
            _atomic_write(entry / "calendar.txt", calendar_bytes)
            header = csv_bytes.split(b"\n", 1)[0].decode("utf-8", "replace")
            _write_json(entry / "meta.json", {
                "version": version,
                "sha256": digest,
                "schema": header,
                "created_at": _now(),
                "provenance": provenance or {},
            })
            self.append_event("publish_dataset", dataset_version=version)
        return version

    def dataset_path(self, version: str) -> Path:
        entry = self.root / "datasets" / version
        if not entry.exists():
            raise UnknownVersion(f"no dataset version {version!r}")
        return entry

    def load_dataset(self, version: str) -> LtvDataset:
        entry = self.dataset_path(version)
        calendar_file = entry / "calendar.txt"
        calendar = HolidayCalendar.load(calendar_file) if calendar_file.exists() else None
        return load_dataset(entry / "data.csv", calendar)

    # -- models --------------------------------------------------------------------

    def register_model(self, artifact: bytes, meta: dict | None = None) -> str:
        version = content_version(artifact)
        entry = self.root / "models" / version
        if not entry.exists():
            entry.mkdir()
            _atomic_write(entry / "model.bin", artifact)
            _write_json(entry / "meta.json", {
                "version": version,
                "sha256": hashlib.sha256(artifact).hexdigest(),
                "status": "candidate",
                "created_at": _now(),
                **(meta or {}),
            })
            self.append_event("register_model", model_version=version)
        return version

    def model_path(self, version: str) -> Path:
        entry = self.root / "models" / version
        if not entry.exists():
            raise UnknownVersion(f"no model version {version!r}")
        return entry

    def model_meta(self, version: str) -> dict:
        return _read_json(self.model_path(version) / "meta.json")

    def load_model_bytes(self, version: str) -> bytes:
        return (self.model_path(version) / "model.bin").read_bytes()

    def _set_model_status(self, version: str, status: str) -> None:
        meta = self.model_meta(version)
        meta["status"] = status
        _write_json(self.model_path(version) / "meta.json", meta)

    def approve(self, version: str) -> None:
        """Promote a candidate to approved and point serving at it."""
        meta = self.model_meta(version)
        if meta["status"] == "retired":
            raise NotApproved(f"model {version} is retired; re-register to serve it")
        self._set_model_status(version, "approved")
        seq = self.append_event("approve", model_version=version)
        self._point_serving(version, seq)

    def retire(self, version: str) -> None:
        self.model_meta(version)  # existence check
        self._set_model_status(version, "retired")
        self.append_event("retire", model_version=version)

    def rollback(self, version: str) -> str:
        """Atomically switch serving back to a previously approved model."""
        meta = self.model_meta(version)
        if meta["status"] != "approved":
            raise NotApproved(
                f"model {version} has status {meta['status']!r}; only approved "
                f"models can serve"
            )
        seq = self.append_event("rollback", model_version=version)
        self._point_serving(version, seq)
        return version

    def _point_serving(self, version: str, seq: int) -> None:
        _write_json(self.serving_path, {"model_version": version, "seq": seq})

    def active_model(self) -> str | None:
        if not self.serving_path.exists():
            return None
        return _read_json(self.serving_path)["model_version"]

    # -- predictions ----------------------------------------------------------------

    def record_predictions(self, records, model_version: str, dataset_version: str,
                           code_version: str) -> str:
        """Write a prediction batch CSV; returns its content version id."""
        lines = [PREDICTION_HEADER]
        for r in records:
            date_text = format_date(r.activation)
            for i in range(r.n):
                lines.append(
                    f"{r.channel},{date_text},{r.m + i},{repr(float(r.predicted[i]))},"
                    f"{model_version},{dataset_version},{code_version}"
                )
        payload = ("\n".join(lines) + "\n").encode()
        version = content_version(payload)
        entry = self.root / "predictions" / version
        if not entry.exists():
            entry.mkdir()
            _atomic_write(entry / "batch.csv", payload)
            _write_json(entry / "meta.json", {
                "version": version,
                "model_version": model_version,
                "dataset_version": dataset_version,
                "code_version": code_version,
                "records": len(list(records)),
                "created_at": _now(),
            })
            self.append_event("predict", prediction_version=version,
                              model_version=model_version,
                              dataset_version=dataset_version)
        return version

    def prediction_path(self, version: str) -> Path:
        entry = self.root / "predictions" / version
        if not entry.exists():
            raise UnknownVersion(f"no prediction batch {version!r}")
        return entry

    def load_prediction_rows(self, version: str) -> list[dict]:
        """Batch rows as dicts keyed by the CSV header fields."""
        path = self.prediction_path(version) / "batch.csv"
        fields = PREDICTION_HEADER.split(",")
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != PREDICTION_HEADER:
                raise InvalidConfig(f"bad prediction batch header {header!r}")
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(dict(zip(fields, line.split(","))))
        return rows

    # -- simulated clock + drift --------------------------------------------------

    def read_clock(self) -> dict:
        if not self.clock_path.exists():
            return {}
        return _read_json(self.clock_path)

    def init_clock(self, start_date: str) -> dict:
        day = parse_date(start_date)
        clock = {"day": day, "last_retrain_day": day}
        _write_json(self.clock_path, clock)
        self.append_event("clock_init", day=format_date(day))
        return clock

    def advance_clock(self, days: int) -> list[dict]:
        """Advance the simulated calendar, firing weekly retrain-due events."""
        if days < 0:
            raise InvalidConfig("can only advance the clock forward")
        clock = self.read_clock()
        if not clock:
            raise InvalidConfig("clock not initialized; run monitor with --config first")
        fired = []
        for _ in range(days):
            clock["day"] += 1
            if clock["day"] - clock["last_retrain_day"] >= 7:
                clock["last_retrain_day"] = clock["day"]
                self.append_event("weekly_retrain_due", day=format_date(clock["day"]))
                fired.append({"kind": "weekly_retrain_due",
                              "day": format_date(clock["day"])})
        _write_json(self.clock_path, clock)
        return fired

    def read_drift(self) -> DriftState:
        if not self.drift_path.exists():
            return DriftState()
        return DriftState.from_dict(_read_json(self.drift_path))

    def write_drift(self, state: DriftState) -> None:
        _write_json(self.drift_path, state.to_dict())

    def set_baseline(self, value: float) -> None:
        state = self.read_drift()
        state.baseline = float(value)
        self.write_drift(state)
        self.append_event("drift_baseline", baseline=float(value))

    def observe_metric(self, day, mape_p_value: float) -> tuple[str, str]:
        """Feed one realized daily metric into the drift detector."""
        if isinstance(day, str):
            day = parse_date(day)
        state = self.read_drift()
        decision, note = check_drift(state, (day, mape_p_value))
        self.write_drift(state)
        self.append_event("drift_check", day=format_date(day),
                          mape_p=float(mape_p_value), decision=decision, note=note)
        return decision, note


class _HubLock:
    """flock-based advisory lock; `with hub.lock(): ...` serializes writers."""

    def __init__(self, path: Path):
        self.path = path
        self._fh = None

    def __enter__(self):
        self._fh = open(self.path, "a+")
        fcntl.flock(self._fh.fileno(), fcntl.LOCK_EX)
        return self

    def __exit__(self, *exc):
        fcntl.flock(self._fh.fileno(), fcntl.LOCK_UN)
        self._fh.close()
        self._fh = None
        return False
