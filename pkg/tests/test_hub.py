"""Artifact store semantics: content addressing, the approve/rollback
lifecycle, the append-only event log, and the drift/clock machinery.

Every test gets a fresh hub rooted in tmp_path; nothing here touches a
network or a real clock except the event timestamps, which are never
asserted on.
"""

import json

import numpy as np
import pytest

from ttf.domain import LtvCurve, LtvDataset, dataset_to_csv, parse_date
from ttf.errors import InvalidConfig, NoBaseline, NotApproved, UnknownVersion
from ttf.evaluation import PredictionRecord
from ttf.hub import (
    DRIFT_WINDOW_DAYS,
    PREDICTION_HEADER,
    DriftState,
    Hub,
    check_drift,
    content_version,
)

DAY = parse_date("2025-01-01")


@pytest.fixture
def hub(tmp_path):
    return Hub(tmp_path / "hub")


def prediction_records(count=2, n=3):
    rng = np.random.default_rng(0)
    return [
        PredictionRecord(
            channel="ch00",
            activation=DAY + i,
            predicted=rng.uniform(0.5, 2.0, size=n),
            actual=None,
            user_count=3,
            observed_prefix=np.ones(2),
        )
        for i in range(count)
    ]


class TestContentAddressing:
    def test_version_is_short_hex(self):
        v = content_version(b"payload")
        assert len(v) == 12
        int(v, 16)

    def test_same_bytes_same_version(self, hub):
        assert hub.register_model(b"abc") == hub.register_model(b"abc")
        assert content_version(b"abc") != content_version(b"abd")

    def test_republish_is_a_noop(self, hub):
        v1 = hub.register_model(b"artifact", meta={"note": "first"})
        events_before = hub.read_events()
        v2 = hub.register_model(b"artifact", meta={"note": "second"})
        assert v1 == v2
        assert hub.read_events() == events_before  # no duplicate event
        assert hub.model_meta(v1)["note"] == "first"  # sidecar untouched

    def test_dataset_hash_separates_csv_from_calendar(self, hub):
        # the separator byte keeps (csv="ab", cal="") != (csv="a", cal="b")
        v1 = hub.publish_dataset(b"ab", b"")
        v2 = hub.publish_dataset(b"a", b"b")
        assert v1 != v2

    def test_calendar_changes_dataset_version(self, hub):
        v1 = hub.publish_dataset(b"csv", b"2025-01-01\n")
        v2 = hub.publish_dataset(b"csv", b"2025-06-01\n")
        assert v1 != v2

    def test_dataset_round_trip(self, hub):
        curves = [LtvCurve("ch00", DAY + t, np.arange(1.0, 5.0), 7)
                  for t in range(3)]
        dataset = LtvDataset.from_curves(curves)
        version = hub.publish_dataset(dataset_to_csv(dataset).encode())
        loaded = hub.load_dataset(version)
        assert loaded.channels() == ["ch00"]
        np.testing.assert_array_equal(loaded.get("ch00", DAY + 1).values,
                                      curves[1].values)

    def test_unknown_versions(self, hub):
        with pytest.raises(UnknownVersion):
            hub.model_path("feedfeedfeed")
        with pytest.raises(UnknownVersion):
            hub.dataset_path("feedfeedfeed")
        with pytest.raises(UnknownVersion):
            hub.prediction_path("feedfeedfeed")


class TestModelLifecycle:
    def test_register_starts_as_candidate(self, hub):
        v = hub.register_model(b"m1")
        assert hub.model_meta(v)["status"] == "candidate"
        assert hub.active_model() is None

    def test_approve_promotes_and_serves(self, hub):
        v = hub.register_model(b"m1")
        hub.approve(v)
        assert hub.model_meta(v)["status"] == "approved"
        assert hub.active_model() == v

    def test_rollback_requires_prior_approval(self, hub):
        v1 = hub.register_model(b"m1")
        v2 = hub.register_model(b"m2")
        hub.approve(v1)
        with pytest.raises(NotApproved):
            hub.rollback(v2)  # still a candidate
        assert hub.active_model() == v1

    def test_rollback_moves_pointer_back(self, hub):
        v1 = hub.register_model(b"m1")
        v2 = hub.register_model(b"m2")
        hub.approve(v1)
        hub.approve(v2)
        assert hub.active_model() == v2
        assert hub.rollback(v1) == v1
        assert hub.active_model() == v1
        assert hub.load_model_bytes(v1) == b"m1"

    def test_rollback_to_current_is_logged_noop(self, hub):
        v = hub.register_model(b"m1")
        hub.approve(v)
        before = len(hub.read_events())
        hub.rollback(v)
        assert hub.active_model() == v
        events = hub.read_events()
        assert len(events) == before + 1
        assert events[-1]["kind"] == "rollback"

    def test_retired_model_cannot_serve(self, hub):
        v = hub.register_model(b"m1")
        hub.retire(v)
        with pytest.raises(NotApproved):
            hub.approve(v)

    def test_serving_pointer_has_no_leftover_tmp(self, hub, tmp_path):
        v = hub.register_model(b"m1")
        hub.approve(v)
        assert hub.serving_path.exists()
        assert not hub.serving_path.with_name("serving.json.tmp").exists()
        pointer = json.loads(hub.serving_path.read_text())
        assert pointer["model_version"] == v
        assert pointer["seq"] == hub.read_events()[-1]["seq"]


class TestEventLog:
    def test_seq_numbers_are_dense_from_one(self, hub):
        hub.register_model(b"a")
        hub.publish_dataset(b"csv")
        hub.register_model(b"b")
        assert [e["seq"] for e in hub.read_events()] == [1, 2, 3]

    def test_one_json_record_per_line(self, hub):
        hub.register_model(b"a")
        hub.append_event("custom", detail="x")
        for line in hub.events_path.read_text().strip().split("\n"):
            record = json.loads(line)
            assert {"seq", "kind", "at"} <= set(record)

    def test_replay_reconstructs_serving_history(self, hub):
        v1 = hub.register_model(b"m1")
        v2 = hub.register_model(b"m2")
        hub.approve(v1)
        hub.approve(v2)
        hub.rollback(v1)
        history = hub.replay_active_history()
        assert [v for _, v in history] == [v1, v2, v1]
        seqs = [s for s, _ in history]
        assert seqs == sorted(seqs)
        # the serving pointer agrees with the last replayed entry
        assert hub.active_model() == history[-1][1]


class TestPredictions:
    def test_batch_layout_and_round_trip(self, hub):
        records = prediction_records(count=2, n=3)
        version = hub.record_predictions(records, "mv1", "dv1", "cv1")
        rows = hub.load_prediction_rows(version)
        assert len(rows) == 6
        first = rows[0]
        assert first["channel_id"] == "ch00"
        assert first["retention_day"] == "2"  # horizon starts at m
        assert first["model_version"] == "mv1"
        assert float(first["predicted_ltv"]) == records[0].predicted[0]

    def test_content_addressed_batches(self, hub):
        records = prediction_records()
        v1 = hub.record_predictions(records, "mv", "dv", "cv")
        v2 = hub.record_predictions(records, "mv", "dv", "cv")
        assert v1 == v2
        predict_events = [e for e in hub.read_events() if e["kind"] == "predict"]
        assert len(predict_events) == 1

    def test_header_validated_on_load(self, hub):
        version = hub.record_predictions(prediction_records(), "m", "d", "c")
        path = hub.prediction_path(version) / "batch.csv"
        body = path.read_text().split("\n", 1)[1]
        path.write_text("wrong,header\n" + body)
        with pytest.raises(InvalidConfig):
            hub.load_prediction_rows(version)

    def test_header_matches_schema(self):
        assert PREDICTION_HEADER.split(",") == [
            "channel_id", "activation_date", "retention_day", "predicted_ltv",
            "model_version", "dataset_version", "code_version"]


class TestClock:
    def test_weekly_retrain_cadence(self, hub):
        hub.init_clock("2025-03-01")
        assert hub.advance_clock(6) == []
        fired = hub.advance_clock(1)
        assert [f["kind"] for f in fired] == ["weekly_retrain_due"]
        assert hub.advance_clock(14) != [] and len(hub.advance_clock(0)) == 0

    def test_two_weeks_fire_twice(self, hub):
        hub.init_clock("2025-03-01")
        fired = hub.advance_clock(14)
        assert [f["day"] for f in fired] == ["2025-03-08", "2025-03-15"]

    def test_validation(self, hub):
        with pytest.raises(InvalidConfig):
            hub.advance_clock(1)  # not initialized
        hub.init_clock("2025-03-01")
        with pytest.raises(InvalidConfig):
            hub.advance_clock(-1)


class TestDriftDetector:
    def feed(self, hub, values, start=DAY):
        decisions = [hub.observe_metric(start + i, v) for i, v in enumerate(values)]
        return decisions[-1]

    def test_requires_baseline(self, hub):
        with pytest.raises(NoBaseline):
            hub.observe_metric(DAY, 0.5)

    def test_partial_window_is_conservative(self, hub):
        hub.set_baseline(0.135)
        decision, note = self.feed(hub, [0.9] * (DRIFT_WINDOW_DAYS - 1))
        assert decision == "ok"
        assert "insufficient window" in note

    def test_small_degradation_stays_silent(self, hub):
        hub.set_baseline(0.135)
        decision, note = self.feed(hub, [0.139] * DRIFT_WINDOW_DAYS)
        assert decision == "ok"
        assert "within threshold" in note

    def test_large_degradation_fires(self, hub):
        hub.set_baseline(0.135)
        decision, note = self.feed(hub, [0.158] * DRIFT_WINDOW_DAYS)
        assert decision == "retrain_trigger"
        assert "exceeds baseline" in note

    def test_window_slides(self, hub):
        hub.set_baseline(0.10)
        # an early spike falls out of the window before it can dominate
        self.feed(hub, [0.9] + [0.10] * DRIFT_WINDOW_DAYS)
        state = hub.read_drift()
        assert len(state.window) == DRIFT_WINDOW_DAYS
        assert all(v == 0.10 for _, v in state.window)

    def test_recovery_after_trigger(self, hub):
        hub.set_baseline(0.10)
        assert self.feed(hub, [0.2] * DRIFT_WINDOW_DAYS)[0] == "retrain_trigger"
        decision, _ = self.feed(hub, [0.10] * DRIFT_WINDOW_DAYS)
        assert decision == "ok"

    def test_decisions_are_logged(self, hub):
        hub.set_baseline(0.135)
        self.feed(hub, [0.139] * DRIFT_WINDOW_DAYS)
        checks = [e for e in hub.read_events() if e["kind"] == "drift_check"]
        assert len(checks) == DRIFT_WINDOW_DAYS
        assert checks[-1]["decision"] == "ok"
        assert checks[-1]["mape_p"] == 0.139

    def test_state_round_trip(self):
        state = DriftState(baseline=0.135, window=[(1, 0.14), (2, 0.15)])
        assert DriftState.from_dict(state.to_dict()) == state

    def test_check_drift_pure_function_on_state(self):
        state = DriftState(baseline=0.10)
        for i in range(DRIFT_WINDOW_DAYS):
            decision, _ = check_drift(state, (i, 0.125))
        assert decision == "retrain_trigger"
        assert len(state.window) == DRIFT_WINDOW_DAYS


def test_lock_serializes_writers(hub):
    with hub.lock():
        assert (hub.root / ".lock").exists()
    with hub.lock():  # re-acquirable after release
        pass
