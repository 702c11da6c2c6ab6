"""The 24-hour sampling-coverage experiment at compressed time scale.

One edge instance runs simulated sensors, a saver, and a sync uploader; a
server instance receives the files. A connectivity controller drives the
link through the scheduled Cellular/WiFi/Disconnected segments. The runner
returns everything the coverage, arrival, continuity, and resource checks
need.
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from fractions import Fraction

import psutil

from ..config import parse_rate_hz
from ..network import NetworkClientModule, NetworkServerModule
from ..runtime import create_runtime
from .coverage import (
    ArrivalCurvePoint,
    CoverageRow,
    FileArrival,
    arrival_curve,
    audio_continuity,
    coverage_report,
    iter_data_dir_records,
    load_file_arrivals,
)
from .saver import DataSaverModule, read_chunk
from .schedule import ConnectivityControllerModule, ConnectivitySchedule, EXPERIMENT_SCHEDULE
from .sensors import MicrophoneCollector
from .sync import DataReceiverModule, DataSyncModule, build_manifest, manifests_equal

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SensorSetup:
    class_name: str
    sensor_id: str
    rate: str  # Hz, fraction syntax allowed; Microphone uses chunk length


# The smartphone sensors plus wearable-style externals: two accelerometers,
# two battery levels, heart rate, core temperature, connectivity, location,
# and chunked microphone audio (9 sources).
DEFAULT_SENSORS = (
    SensorSetup("AccelerometerCollector", "Accel", "20"),
    SensorSetup("BatteryCollector", "Battery", "1/60"),
    SensorSetup("ConnectivityCollector", "Connectivity", "1"),
    SensorSetup("LocationCollector", "Location", "1/20"),
    SensorSetup("MicrophoneCollector", "Microphone", "1/10"),
    SensorSetup("AccelerometerCollector", "PolarAccel", "20"),
    SensorSetup("BatteryCollector", "PolarBattery", "1/60"),
    SensorSetup("HeartRateCollector", "PolarHeartRate", "1/10"),
    SensorSetup("TemperatureCollector", "CoreTemperature", "1"),
)

SMARTPHONE_SENSOR_IDS = ("Accel", "Battery", "Connectivity", "Location", "Microphone")


@dataclass
class CoverageExperimentConfig:
    work_dir: str
    time_scale: float = 60.0
    hours: int = 24
    user: str = "User01"
    sync_period: str = "300s"
    samples_per_chunk: int = 160
    chunk_seconds: int = 10
    schedule: ConnectivitySchedule = field(default_factory=lambda: EXPERIMENT_SCHEDULE)
    sensors: tuple[SensorSetup, ...] = DEFAULT_SENSORS
    retry_interval_ms: int = 5000
    memory_sample_every_virtual_ms: int = 900_000


@dataclass
class CoverageExperimentResult:
    client_dir: str
    server_root: str
    user: str
    epoch_ms: int
    hours: int
    specs: dict[str, Fraction]
    posted: dict[str, int]
    records_saved: int
    records_lost: int
    coverage_rows: list[CoverageRow]
    arrivals: list[FileArrival]
    curve: list[ArrivalCurvePoint]
    dirs_converged: bool
    chunk_count: int
    audio_ok: bool
    audio_reason: str
    memory_samples: list[tuple[int, int]]  # (virtual_ms, rss_bytes)
    elapsed_real_s: float
    disconnect_windows: list[tuple[float, float]]

    @property
    def server_user_dir(self) -> str:
        return os.path.join(self.server_root, self.user)


def _schedule_text(schedule: ConnectivitySchedule) -> str:
    return ",".join(f"{s.start_hour:g}-{s.end_hour:g}:{s.mode}" for s in schedule.segments)


def _sensor_rate(setup: SensorSetup, chunk_seconds: int) -> Fraction:
    if setup.class_name == "MicrophoneCollector":
        return Fraction(1, chunk_seconds)
    return parse_rate_hz(setup.rate)


def run_coverage_experiment(cfg: CoverageExperimentConfig) -> CoverageExperimentResult:
    os.makedirs(cfg.work_dir, exist_ok=True)
    client_dir = os.path.join(cfg.work_dir, "edge_data")
    server_root = os.path.join(cfg.work_dir, "server_data")
    os.makedirs(client_dir, exist_ok=True)

    server_rt = create_runtime("server", cfg.time_scale)
    net_server = NetworkServerModule()
    receiver = DataReceiverModule()
    server_rt.add_module(net_server, "net_server", {"Port": 0})
    server_rt.add_module(receiver, "receiver", {"StoragePath": server_root})
    server_rt.start()

    edge_rt = create_runtime("edge", cfg.time_scale)
    end_ms = edge_rt.clock.epoch_ms + cfg.hours * 3_600_000
    controller = ConnectivityControllerModule()
    edge_rt.add_module(controller, "link_controller",
                       {"Schedule": _schedule_text(cfg.schedule)})

    sensors = []
    save_blocks = []
    for setup in cfg.sensors:
        registry_cls = _sensor_class(setup.class_name)
        sensor = registry_cls()
        props = {
            "SensorId": setup.sensor_id,
            "Output": f"{setup.sensor_id}Data",
            "RunUntilMs": end_ms,
        }
        if setup.class_name == "MicrophoneCollector":
            props["ContinuousChunks"] = f"{cfg.chunk_seconds}s"
            props["SamplesPerChunk"] = str(cfg.samples_per_chunk)
            save_blocks.append({
                "What": f"{setup.sensor_id}Data",
                "FileFormat": "CHUNK",
                "StoragePath": os.path.join(client_dir, setup.sensor_id, "chunk_"),
            })
        else:
            props["Rate"] = setup.rate
            save_blocks.append({
                "What": f"{setup.sensor_id}Data",
                "StoragePath": client_dir,
            })
        edge_rt.add_module(sensor, f"sensor_{setup.sensor_id}", props)
        sensors.append((setup, sensor))

    saver = DataSaverModule()
    edge_rt.add_module(saver, "saver", {"save": save_blocks})
    syncer = DataSyncModule()
    edge_rt.add_module(syncer, "sync", {
        "FilePath": client_dir,
        "UserIdentifier": cfg.user,
        "SyncPeriod": cfg.sync_period,
    })
    net_client = NetworkClientModule()
    edge_rt.add_module(net_client, "net_client", {
        "ConnectTo": f"127.0.0.1:{net_server.port}",
        "RetryIntervalMs": str(cfg.retry_interval_ms),
    })

    started_real = time.monotonic()
    edge_rt.start()

    process = psutil.Process()
    memory_samples: list[tuple[int, int]] = []
    next_memory_ms = edge_rt.clock.epoch_ms

    while edge_rt.clock.now_ms() < end_ms:
        now_ms = edge_rt.clock.now_ms()
        if now_ms >= next_memory_ms:
            memory_samples.append((now_ms, process.memory_info().rss))
            next_memory_ms += cfg.memory_sample_every_virtual_ms
        time.sleep(0.1)

    # make sure every grid point inside the span has fired, then drain
    edge_rt.fire_due_timers(end_ms)
    edge_rt.drain()
    saver.flush()
    memory_samples.append((edge_rt.clock.now_ms(), process.memory_info().rss))

    # final catch-up: schedule wraps to a connected segment past hour 24
    dirs_converged = False
    for _attempt in range(60):
        syncer.trigger_sync()
        deadline = time.monotonic() + 60.0
        while not syncer.idle and time.monotonic() < deadline:
            time.sleep(0.05)
        if manifests_equal(build_manifest(client_dir, syncer.cache),
                           receiver.manifest_for(cfg.user)):
            dirs_converged = True
            break
        time.sleep(0.2)

    elapsed_real_s = time.monotonic() - started_real
    posted = {setup.sensor_id: sensor.posted for setup, sensor in sensors}
    records_saved = saver.records_saved
    records_lost = saver.records_lost

    edge_rt.stop()
    server_rt.stop()

    specs = {setup.sensor_id: _sensor_rate(setup, cfg.chunk_seconds) for setup in cfg.sensors}
    server_user_dir = os.path.join(server_root, cfg.user)
    epoch_ms = edge_rt.clock.epoch_ms

    scan = ((sensor_id, ts) for sensor_id, ts, _rel in iter_data_dir_records(server_user_dir))
    coverage_rows = coverage_report(scan, specs, cfg.hours, epoch_ms)

    arrivals = load_file_arrivals(server_root, cfg.user)
    expected_totals = {sensor_id: int(rate * 3600 * cfg.hours) for sensor_id, rate in specs.items()}
    curve = arrival_curve(arrivals, expected_totals, epoch_ms, cfg.hours)

    chunk_count = 0
    chunks = []
    mic_ids = [s.sensor_id for s in cfg.sensors if s.class_name == "MicrophoneCollector"]
    for mic_id in mic_ids:
        chunk_dir = os.path.join(server_user_dir, mic_id)
        if os.path.isdir(chunk_dir):
            names = [n for n in os.listdir(chunk_dir) if n.endswith(".chunk")]
            chunk_count += len(names)
            chunks.extend(read_chunk(os.path.join(chunk_dir, n)) for n in names)
    audio_ok, audio_reason = audio_continuity(chunks) if chunks else (False, "no chunks")

    return CoverageExperimentResult(
        client_dir=client_dir,
        server_root=server_root,
        user=cfg.user,
        epoch_ms=epoch_ms,
        hours=cfg.hours,
        specs=specs,
        posted=posted,
        records_saved=records_saved,
        records_lost=records_lost,
        coverage_rows=coverage_rows,
        arrivals=arrivals,
        curve=curve,
        dirs_converged=dirs_converged,
        chunk_count=chunk_count,
        audio_ok=audio_ok,
        audio_reason=audio_reason,
        memory_samples=memory_samples,
        elapsed_real_s=elapsed_real_s,
        disconnect_windows=cfg.schedule.disconnected_windows(),
    )


def _sensor_class(class_name: str):
    from . import sensors as sensor_classes
    return getattr(sensor_classes, class_name)


def arrivals_in_window(arrivals: list[FileArrival], epoch_ms: int,
                       start_hour: float, end_hour: float,
                       grace_ms: int = 60_000) -> list[FileArrival]:
    """Arrivals stamped inside a window (with a leading grace period for
    frames already in flight when the link dropped)."""
    lo = epoch_ms + int(start_hour * 3_600_000) + grace_ms
    hi = epoch_ms + int(end_hour * 3_600_000)
    return [a for a in arrivals if lo <= a.arrival_ms < hi]


def backlog_cleared_by(arrivals: list[FileArrival], specs: dict[str, Fraction],
                       epoch_ms: int, reconnect_hour: float, deadline_hour: float) -> bool:
    """True when, for every sensor, everything sampled before the reconnect
    has arrived by the deadline."""
    by_sensor: dict[str, int] = {}
    for arrival in arrivals:
        if arrival.arrival_ms <= epoch_ms + int(deadline_hour * 3_600_000):
            by_sensor[arrival.sensor_id] = by_sensor.get(arrival.sensor_id, 0) + arrival.record_count
    for sensor_id, rate in specs.items():
        expected_before = int(rate * 3600 * reconnect_hour)
        if by_sensor.get(sensor_id, 0) < expected_before:
            return False
    return True
