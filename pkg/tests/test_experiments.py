"""End-to-end coverage experiment at a small scale (full run is in acceptance)."""
import pytest

from edgeloop.sensing.experiments import (
    CoverageExperimentConfig,
    SensorSetup,
    arrivals_in_window,
    backlog_cleared_by,
    run_coverage_experiment,
)
from edgeloop.sensing.schedule import ConnectivitySchedule

SMOKE_SENSORS = (
    SensorSetup("AccelerometerCollector", "Accel", "2"),
    SensorSetup("BatteryCollector", "Battery", "1/60"),
    SensorSetup("ConnectivityCollector", "Connectivity", "1/4"),
    SensorSetup("MicrophoneCollector", "Microphone", "1/10"),
)

SMOKE_SCHEDULE = ConnectivitySchedule.parse(
    "0-0.25:Cellular,0.25-0.5:Disconnected,0.5-24:WiFi")


@pytest.fixture(scope="module")
def smoke_result(tmp_path_factory):
    cfg = CoverageExperimentConfig(
        work_dir=str(tmp_path_factory.mktemp("exp")),
        time_scale=300.0,
        hours=1,
        sensors=SMOKE_SENSORS,
        schedule=SMOKE_SCHEDULE,
        sync_period="60s",
        retry_interval_ms=300,
        samples_per_chunk=8,
        memory_sample_every_virtual_ms=300_000,
    )
    return run_coverage_experiment(cfg)


def test_smoke_full_coverage(smoke_result):
    assert smoke_result.records_lost == 0
    for row in smoke_result.coverage_rows:
        assert row.received == row.expected, (row.sensor_id, row.hour, row.received)
        assert row.coverage_pct == 100.0


def test_smoke_posted_equals_saved(smoke_result):
    assert sum(smoke_result.posted.values()) == smoke_result.records_saved


def test_smoke_dirs_converged(smoke_result):
    assert smoke_result.dirs_converged


def test_smoke_no_arrivals_while_disconnected(smoke_result):
    stuck = arrivals_in_window(smoke_result.arrivals, smoke_result.epoch_ms, 0.25, 0.5)
    assert stuck == []


def test_smoke_backlog_clears_after_reconnect(smoke_result):
    assert backlog_cleared_by(
        smoke_result.arrivals, smoke_result.specs, smoke_result.epoch_ms,
        reconnect_hour=0.5, deadline_hour=1.0)


def test_smoke_audio_continuity(smoke_result):
    assert smoke_result.chunk_count == 360  # one chunk per 10 s over one hour
    assert smoke_result.audio_ok, smoke_result.audio_reason


def test_smoke_arrival_curve_reaches_total(smoke_result):
    finals = {}
    for point in smoke_result.curve:
        finals[point.sensor_id] = point.cumulative_pct
    # everything expected arrived by the end of the final sync
    for sensor_id, pct in finals.items():
        assert pct == pytest.approx(100.0, abs=0.01), sensor_id
