"""Coverage and arrival-time analytics over recorded data.

Coverage is the per-sensor, per-hour percentage of received samples against
the expected count (rate x 3600). Arrival curves show, per sensor, the
cumulative share of all expected samples that has reached the receiving side
by each point in virtual time; disconnected periods appear as flat spans.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator

from ..errors import UnknownSensorId
from ..wire import WStruct
from .saver import read_chunk, read_records


@dataclass(frozen=True)
class CoverageRow:
    sensor_id: str
    hour: int
    expected: int
    received: int

    @property
    def coverage_pct(self) -> float:
        return 100.0 * self.received / self.expected if self.expected else 0.0


@dataclass(frozen=True)
class FileArrival:
    rel_path: str
    sensor_id: str
    record_count: int
    arrival_ms: int


def iter_data_dir_records(data_dir: str) -> Iterator[tuple[str, int, str]]:
    """Yield (sensor_id, virtual_timestamp_ms, rel_path) for every record."""
    for root, _dirs, files in os.walk(data_dir):
        for name in sorted(files):
            full = os.path.join(root, name)
            rel = os.path.relpath(full, data_dir).replace(os.sep, "/")
            if name.endswith(".rec"):
                for record in read_records(full):
                    yield (record["sensor_id"].value,
                           record["virtual_timestamp_ms"].value, rel)
            elif name.endswith(".chunk"):
                record = read_chunk(full)
                yield (record["sensor_id"].value,
                       record["virtual_timestamp_ms"].value, rel)


def coverage_report(records: Iterable[tuple[str, int]],
                    specs: dict[str, Fraction],
                    hours: int,
                    epoch_ms: int) -> list[CoverageRow]:
    """Count received samples per sensor-hour against rate x 3600.

    `records` yields (sensor_id, virtual_timestamp_ms). Record timestamps
    outside [0, hours) fall off the report; unknown sensors are an error.
    """
    counts: dict[tuple[str, int], int] = {}
    for sensor_id, timestamp_ms in records:
        if sensor_id not in specs:
            raise UnknownSensorId(f"record for unknown sensor {sensor_id!r}")
        hour = (timestamp_ms - epoch_ms) // 3_600_000
        if 0 <= hour < hours:
            counts[(sensor_id, hour)] = counts.get((sensor_id, hour), 0) + 1
    rows = []
    for sensor_id in sorted(specs):
        rate = specs[sensor_id]
        expected_per_hour = rate * 3600
        if expected_per_hour.denominator != 1:
            raise UnknownSensorId(f"sensor {sensor_id!r} rate is not integral per hour")
        for hour in range(hours):
            rows.append(CoverageRow(
                sensor_id=sensor_id,
                hour=hour,
                expected=int(expected_per_hour),
                received=counts.get((sensor_id, hour), 0),
            ))
    return rows


def load_file_arrivals(server_root: str, user: str) -> list[FileArrival]:
    """Join the receiver's arrival log with stored file contents."""
    arrivals_path = os.path.join(server_root, "arrivals.csv")
    user_dir = os.path.join(server_root, user)
    out = []
    if not os.path.exists(arrivals_path):
        return out
    latest: dict[str, int] = {}
    with open(arrivals_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row_user, rel_path, arrival = line.rsplit(",", 2)
            if row_user != user:
                continue
            latest[rel_path] = int(arrival)  # re-sent files keep the last arrival
    for rel_path, arrival_ms in latest.items():
        full = os.path.join(user_dir, rel_path.replace("/", os.sep))
        if not os.path.exists(full):
            continue
        if rel_path.endswith(".chunk"):
            record = read_chunk(full)
            out.append(FileArrival(rel_path, record["sensor_id"].value, 1, arrival_ms))
        elif rel_path.endswith(".rec"):
            records = list(read_records(full))
            if records:
                out.append(FileArrival(rel_path, records[0]["sensor_id"].value,
                                       len(records), arrival_ms))
    out.sort(key=lambda a: (a.sensor_id, a.arrival_ms, a.rel_path))
    return out


@dataclass(frozen=True)
class ArrivalCurvePoint:
    sensor_id: str
    minute: int  # virtual minutes since the epoch
    cumulative_pct: float


def arrival_curve(arrivals: list[FileArrival],
                  expected_totals: dict[str, int],
                  epoch_ms: int,
                  hours: int,
                  step_ms: int = 60_000) -> list[ArrivalCurvePoint]:
    """Cumulative per-sensor arrival percentages sampled on a minute grid,
    normalized by the total expected after the full span.

    The grid extends past the nominal span when the final sync lands after
    it, so the curve always shows the converged tail.
    """
    span_ms = hours * 3_600_000
    if arrivals:
        last = max(a.arrival_ms for a in arrivals) - epoch_ms
        span_ms = max(span_ms, -(-last // step_ms) * step_ms)
    steps = span_ms // step_ms
    points = []
    by_sensor: dict[str, list[FileArrival]] = {}
    for arrival in arrivals:
        by_sensor.setdefault(arrival.sensor_id, []).append(arrival)
    for sensor_id in sorted(expected_totals):
        expected = expected_totals[sensor_id]
        events = sorted(by_sensor.get(sensor_id, []), key=lambda a: a.arrival_ms)
        cumulative = 0
        index = 0
        for step in range(steps + 1):
            cutoff = epoch_ms + step * step_ms
            while index < len(events) and events[index].arrival_ms <= cutoff:
                cumulative += events[index].record_count
                index += 1
            pct = 100.0 * cumulative / expected if expected else 0.0
            points.append(ArrivalCurvePoint(sensor_id, step, pct))
    return points


def audio_continuity(chunks: list[WStruct]) -> tuple[bool, str]:
    """Check that audio chunks tile virtual time with no gap or overlap.

    Takes decoded SampleRecord structs with AudioChunk payloads; returns
    (ok, reason).
    """
    if not chunks:
        return False, "no chunks"
    spans = sorted(
        (c["payload"]["start_ms"].value, c["payload"]["duration_ms"].value)
        for c in chunks
    )
    for (start_a, dur_a), (start_b, _dur_b) in zip(spans, spans[1:]):
        end_a = start_a + dur_a
        if end_a < start_b:
            return False, f"gap between {end_a} and {start_b}"
        if end_a > start_b:
            return False, f"overlap between {start_b} and {end_a}"
    return True, "continuous"
