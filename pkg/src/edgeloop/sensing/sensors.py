"""Simulated sensor modules.

Each sensor fires on its own virtual-time periodic timer at a fixed rate and
posts one SampleRecord per tick. Payloads are deterministic pseudo-random
functions of (seed, tick index), so repeated runs produce identical values;
only counts and timing matter for the coverage experiment, not waveform
realism.

Tick timestamps are nominal grid times (epoch + i * period), which makes
per-hour sample counts exact by construction: a sensor at rate r produces
exactly r * 3600 records per virtual hour.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction

from ..config import parse_duration_ms, parse_rate_hz
from ..errors import InvalidProperty
from ..runtime import Module
from ..wire import WFloat, WInt, WList, WString, WStruct, WireValue

RECORD_TYPE = "SampleRecord"


@dataclass
class SensorSpec:
    sensor_id: str
    rate_hz: Fraction
    payload_kind: str  # Scalar | Vector3 | AudioChunk
    generator_seed: int
    sample_rate_hz: int = 16000  # AudioChunk only: nominal capture rate
    chunk_seconds: int = 10
    samples_per_chunk: int = 160  # desk-scale stand-in for the real waveform

    def __post_init__(self):
        if self.rate_hz <= 0:
            raise InvalidProperty(f"rate must be positive, got {self.rate_hz}")
        period = Fraction(1000) / self.rate_hz
        if period.denominator != 1:
            raise InvalidProperty(f"rate {self.rate_hz} has a non-integral period in ms")

    @property
    def period_ms(self) -> int:
        return int(Fraction(1000) / self.rate_hz)

    def expected_per_hour(self) -> int:
        expected = self.rate_hz * 3600
        if expected.denominator != 1:
            raise InvalidProperty(f"rate {self.rate_hz} is not integral per hour")
        return int(expected)


def make_record(sensor_id: str, virtual_timestamp_ms: int, sequence: int,
                payload: WireValue) -> WStruct:
    return WStruct(RECORD_TYPE, {
        "sensor_id": WString(sensor_id),
        "virtual_timestamp_ms": WInt(virtual_timestamp_ms),
        "arrival_timestamp_ms": WInt(virtual_timestamp_ms),
        "sequence": WInt(sequence),
        "payload": payload,
    })


def _tick_rng(seed: int, index: int) -> random.Random:
    return random.Random((seed << 32) ^ index)


def scalar_payload(spec: SensorSpec, index: int, kind: str) -> WStruct:
    rng = _tick_rng(spec.generator_seed, index)
    t_s = index * spec.period_ms / 1000.0
    day_phase = 2.0 * math.pi * t_s / 86400.0
    if kind == "battery":
        value = max(0.0, 100.0 - 80.0 * t_s / 86400.0 + rng.gauss(0.0, 0.05))
    elif kind == "heart_rate":
        value = 75.0 + 25.0 * math.sin(day_phase - math.pi / 2) + rng.gauss(0.0, 2.0)
    elif kind == "temperature":
        value = 36.8 + 0.45 * math.sin(day_phase - math.pi / 2) + rng.gauss(0.0, 0.03)
    else:
        value = rng.gauss(0.0, 1.0)
    return WStruct("Scalar", {"value": WFloat(value)})


def vector3_payload(spec: SensorSpec, index: int) -> WStruct:
    rng = _tick_rng(spec.generator_seed, index)
    return WStruct("Vector3", {
        "x": WFloat(rng.gauss(0.0, 0.02)),
        "y": WFloat(rng.gauss(0.0, 0.02)),
        "z": WFloat(9.81 + rng.gauss(0.0, 0.02)),
    })


def location_payload(spec: SensorSpec, index: int) -> WStruct:
    rng = _tick_rng(spec.generator_seed, index)
    t_s = index * spec.period_ms / 1000.0
    return WStruct("Location", {
        "lat": WFloat(47.3769 + 0.002 * math.sin(t_s / 7200.0) + rng.gauss(0.0, 1e-5)),
        "lon": WFloat(8.5417 + 0.002 * math.cos(t_s / 9600.0) + rng.gauss(0.0, 1e-5)),
    })


def audio_chunk_payload(spec: SensorSpec, index: int, start_ms: int) -> WStruct:
    rng = _tick_rng(spec.generator_seed, index)
    samples = [rng.gauss(0.0, 0.01) for _ in range(spec.samples_per_chunk)]
    return WStruct("AudioChunk", {
        "start_ms": WInt(start_ms),
        "duration_ms": WInt(spec.chunk_seconds * 1000),
        "sample_rate_hz": WInt(spec.sample_rate_hz),
        "samples": WList([WFloat(s) for s in samples]),
    })


def sensor_payload(spec: SensorSpec, index: int, start_ms: int = 0,
                   scalar_kind: str = "generic") -> WireValue:
    if spec.payload_kind == "Vector3":
        return vector3_payload(spec, index)
    if spec.payload_kind == "AudioChunk":
        return audio_chunk_payload(spec, index, start_ms)
    if spec.payload_kind == "Location":
        return location_payload(spec, index)
    return scalar_payload(spec, index, scalar_kind)


class SimulatedSensor(Module):
    """Base sensor module: periodic capture at `Rate` Hz, posting to `Output`.

    Properties:
        Rate        sampling rate in Hz ("20", "1/60")
        Output      channel name (default "<SensorId>Data")
        SensorId    logical sensor id (default per subclass)
        Seed        generator seed (default per subclass)
        RunUntilMs  stop producing at this virtual time (set by harnesses)
    """

    default_sensor_id = "Sensor"
    default_rate = "1"
    payload_kind = "Scalar"
    scalar_kind = "generic"

    def __init__(self):
        super().__init__()
        self.spec: SensorSpec | None = None
        self.index = 0
        self.posted = 0
        self._publisher = None
        self._end_ms: int | None = None
        self._timer = None

    def _build_spec(self) -> SensorSpec:
        sensor_id = str(self.prop("SensorId", self.default_sensor_id))
        return SensorSpec(
            sensor_id=sensor_id,
            rate_hz=parse_rate_hz(self.prop("Rate", self.default_rate)),
            payload_kind=self.payload_kind,
            generator_seed=int(self.prop("Seed", sum(map(ord, sensor_id)))),
        )

    def initialize(self):
        self.spec = self._build_spec()
        output = str(self.prop("Output", f"{self.spec.sensor_id}Data"))
        # EmitRecords=false posts bare payloads (e.g. AudioChunk straight
        # into an inference module) instead of SampleRecord wrappers.
        self._wrap = str(self.prop("EmitRecords", "true")).lower() != "false"
        if self._wrap:
            type_name = RECORD_TYPE
        else:
            from ..wire import type_name_of
            type_name = type_name_of(self._payload(0, self.clock.epoch_ms))
        self._publisher = self.publish(output, type_name)
        end = self.prop("RunUntilMs")
        self._end_ms = int(end) if end is not None else None
        self._timer = self.register_periodic(self.spec.period_ms, self._tick)

    def _tick(self):
        nominal = self.clock.epoch_ms + self.index * self.spec.period_ms
        if self._end_ms is not None and nominal >= self._end_ms:
            if self._timer is not None:
                self.runtime.cancel_timer(self._timer)
                self._timer = None
            return
        payload = self._payload(self.index, nominal)
        if self._wrap:
            value = make_record(self.spec.sensor_id, nominal, self.index, payload)
        else:
            value = payload
        self._publisher.post(value)
        self.index += 1
        self.posted += 1

    def _payload(self, index: int, nominal_ms: int) -> WireValue:
        return sensor_payload(self.spec, index, nominal_ms, self.scalar_kind)


class AccelerometerCollector(SimulatedSensor):
    default_sensor_id = "Accel"
    default_rate = "20"
    payload_kind = "Vector3"


class BatteryCollector(SimulatedSensor):
    default_sensor_id = "Battery"
    default_rate = "1/60"
    scalar_kind = "battery"


class HeartRateCollector(SimulatedSensor):
    default_sensor_id = "HeartRate"
    default_rate = "1/10"
    scalar_kind = "heart_rate"


class TemperatureCollector(SimulatedSensor):
    default_sensor_id = "Temperature"
    default_rate = "1"
    scalar_kind = "temperature"


class LocationCollector(SimulatedSensor):
    default_sensor_id = "Location"
    default_rate = "1/20"
    payload_kind = "Location"


class ConnectivityCollector(SimulatedSensor):
    """Records the current link mode (from the link controller, if any)."""

    default_sensor_id = "Connectivity"
    default_rate = "1"

    def _payload(self, index: int, nominal_ms: int) -> WireValue:
        controller = self.runtime.extensions.get("link_controller")
        mode = controller.current_mode if controller is not None else "WiFi"
        return WStruct("Connectivity", {"mode": WString(mode)})


class MicrophoneCollector(SimulatedSensor):
    """Continuous audio in fixed-length chunks (one record per chunk).

    `ContinuousChunks` sets the chunk length (e.g. "10s"), which fixes the
    rate at one chunk per chunk length. `SamplesPerChunk` bounds the stored
    stand-in waveform; `SamplingRate` is carried as chunk metadata.
    """

    default_sensor_id = "Microphone"
    payload_kind = "AudioChunk"

    def _build_spec(self) -> SensorSpec:
        chunk_ms = parse_duration_ms(self.prop("ContinuousChunks", "10s"))
        if chunk_ms <= 0 or chunk_ms % 1000:
            raise InvalidProperty(f"ContinuousChunks must be whole seconds, got {chunk_ms} ms")
        chunk_seconds = chunk_ms // 1000
        sensor_id = str(self.prop("SensorId", self.default_sensor_id))
        return SensorSpec(
            sensor_id=sensor_id,
            rate_hz=Fraction(1, chunk_seconds),
            payload_kind="AudioChunk",
            generator_seed=int(self.prop("Seed", sum(map(ord, sensor_id)))),
            sample_rate_hz=int(self.prop("SamplingRate", 16000)),
            chunk_seconds=chunk_seconds,
            samples_per_chunk=int(self.prop("SamplesPerChunk", 160)),
        )
