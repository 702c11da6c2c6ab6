"""Connectivity scheduling: timed link modes applied to a network client.

A schedule is an ordered list of contiguous segments covering a 24-hour day,
each with a mode: Cellular, WiFi, or Disconnected. The controller module
toggles the client link at segment boundaries and models Cellular vs WiFi as
different bandwidth caps on the uplink.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import InvalidProperty
from ..runtime import Module

MODES = ("Cellular", "WiFi", "Disconnected")

# Uplink caps in bytes per virtual second.
BANDWIDTH_BYTES_PER_VS = {
    "WiFi": 8 * 1024 * 1024,
    "Cellular": 3 * 1024 * 1024,
}


@dataclass(frozen=True)
class Segment:
    start_hour: float
    end_hour: float
    mode: str


class ConnectivitySchedule:
    """Contiguous segments covering [0, 24) hours."""

    def __init__(self, segments: list[Segment]):
        if not segments:
            raise InvalidProperty("schedule needs at least one segment")
        if segments[0].start_hour != 0 or segments[-1].end_hour != 24:
            raise InvalidProperty("schedule must cover hours 0 through 24")
        for prev, cur in zip(segments, segments[1:]):
            if prev.end_hour != cur.start_hour:
                raise InvalidProperty(
                    f"gap between segments at hour {prev.end_hour} vs {cur.start_hour}")
        for seg in segments:
            if seg.mode not in MODES:
                raise InvalidProperty(f"unknown mode {seg.mode!r}")
            if not seg.start_hour < seg.end_hour:
                raise InvalidProperty(f"empty segment at hour {seg.start_hour}")
        self.segments = list(segments)

    def mode_at(self, hour: float) -> str:
        hour = hour % 24.0
        for seg in self.segments:
            if seg.start_hour <= hour < seg.end_hour:
                return seg.mode
        return self.segments[-1].mode

    def disconnected_windows(self) -> list[tuple[float, float]]:
        return [(s.start_hour, s.end_hour) for s in self.segments if s.mode == "Disconnected"]

    @staticmethod
    def parse(text: str) -> "ConnectivitySchedule":
        """Parse "0-2:Cellular,2-10:WiFi,..." into a schedule."""
        segments = []
        for part in str(text).split(","):
            part = part.strip()
            if not part:
                continue
            try:
                span, mode = part.split(":")
                start, end = span.split("-")
                segments.append(Segment(float(start), float(end), mode.strip()))
            except ValueError:
                raise InvalidProperty(f"bad schedule segment {part!r}") from None
        return ConnectivitySchedule(segments)


# The 24-hour protocol used by the coverage experiment: two-hour cellular
# bookends, a long Wi-Fi block, and two two-hour disconnects.
EXPERIMENT_SCHEDULE = ConnectivitySchedule.parse(
    "0-2:Cellular,2-10:WiFi,10-12:Disconnected,12-18:Cellular,18-20:Disconnected,"
    "20-22:WiFi,22-24:Cellular")


def apply_schedule(schedule: ConnectivitySchedule, link_controller: "ConnectivityControllerModule") -> None:
    """Point a controller at a schedule; takes effect at its next check."""
    link_controller.schedule = schedule
    link_controller.current_mode = schedule.mode_at(0.0)


class ConnectivityControllerModule(Module):
    """Applies a ConnectivitySchedule to this runtime's network client.

    Properties:
        Schedule  segment string (default: the experiment protocol)
        Client    instance name of the NetworkClientModule (default: any)

    Registers itself as the runtime's "link_controller" extension so the
    connectivity sensor can record the active mode.
    """

    def __init__(self):
        super().__init__()
        self.schedule = EXPERIMENT_SCHEDULE
        self.current_mode = "WiFi"
        self.mode_changes: list[tuple[int, str]] = []

    def initialize(self):
        text = self.prop("Schedule")
        if text:
            self.schedule = ConnectivitySchedule.parse(text)
        self.current_mode = self.schedule.mode_at(0.0)
        self.runtime.extensions["link_controller"] = self
        self._client_name = self.prop("Client")
        self._client = None
        self._gate_installed = False
        self.register_periodic(1000, self._check)

    def _resolve_client(self):
        if self._client is not None:
            return self._client
        from ..network import NetworkClientModule
        for handle in self.runtime.handles():
            if isinstance(handle.module, NetworkClientModule):
                if self._client_name in (None, "", handle.instance_name):
                    self._client = handle.module
                    break
        if self._client is not None and not self._gate_installed:
            self._client.link_gate = lambda: self.current_mode != "Disconnected"
            self._gate_installed = True
            self._apply_mode()
        return self._client

    def _check(self):
        client = self._resolve_client()
        hour = ((self.clock.now_ms() - self.clock.epoch_ms) / 3_600_000.0) % 24.0
        mode = self.schedule.mode_at(hour)
        if mode != self.current_mode:
            self.current_mode = mode
            self.mode_changes.append((self.clock.now_ms(), mode))
            if client is not None:
                self._apply_mode()

    def _apply_mode(self):
        client = self._client
        if client is None:
            return
        if self.current_mode == "Disconnected":
            if client.link is not None:
                client.link.close()
        else:
            client.set_bandwidth(BANDWIDTH_BYTES_PER_VS[self.current_mode])
