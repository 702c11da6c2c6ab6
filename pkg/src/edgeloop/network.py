"""TCP transport between runtime instances.

Instances exchange channel tables on connect and whenever their local table
changes; envelopes posted to a channel with a subscriber on a connected peer
are serialized and sent automatically, so remote modules are served exactly
like local ones. Delivery over a link is at-most-once: envelopes posted
while a peer is down are counted in `dropped_count`, never buffered
(durable transfer is the sync layer's job).

Wire protocol (all integers big-endian):
    frame   = magic "CLD1" + frame_type u8 + payload_len u32 + payload
    HELLO   (0x01) = version u16 + String instance_id
    TABLE   (0x02) = count u32 + entries(String channel + flags u8 +
                     String type_name), flags bit0=publisher bit1=subscriber
    DATA    (0x03) = String channel + sequence u64 + timestamp_ms i64 +
                     encoded value
    PING    (0x04) / PONG (0x05) = empty
String fields use the wire encoding's tagged string form (0x04 + u32 + utf-8).
"""
from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import wire
from .errors import MalformedFrame, PortInUse
from .runtime import Envelope, Module, Runtime

log = logging.getLogger(__name__)

MAGIC = b"CLD1"
PROTOCOL_VERSION = 1

FT_HELLO = 0x01
FT_TABLE = 0x02
FT_DATA = 0x03
FT_PING = 0x04
FT_PONG = 0x05

_HEADER = struct.Struct(">4sBI")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_I64 = struct.Struct(">q")

PING_INTERVAL_MS = 10_000  # virtual
MAX_MISSED_PONGS = 3


@dataclass
class ChannelTableEntry:
    channel: str
    has_publisher: bool
    has_subscriber: bool
    type_name: str


@dataclass
class PeerState:
    peer_instance_id: str = ""
    remote_table: dict = field(default_factory=dict)  # channel -> ChannelTableEntry
    connected: bool = False
    dropped_count: int = 0

    @property
    def status(self) -> str:
        return "Connected" if self.connected else "Disconnected"


# --- frame building / parsing ---

def build_frame(frame_type: int, payload: bytes) -> bytes:
    return _HEADER.pack(MAGIC, frame_type, len(payload)) + payload

def build_hello(instance_id: str) -> bytes:
    return build_frame(FT_HELLO, _U16.pack(PROTOCOL_VERSION) + wire.encode(wire.WString(instance_id)))

def parse_hello(payload: bytes) -> tuple[int, str]:
    if len(payload) < 2:
        raise MalformedFrame("HELLO too short")
    version = _U16.unpack_from(payload, 0)[0]
    instance_id, offset = wire.decode(payload, 2)
    if not isinstance(instance_id, wire.WString) or offset != len(payload):
        raise MalformedFrame("bad HELLO payload")
    return version, instance_id.value

def build_table(entries: list[ChannelTableEntry]) -> bytes:
    out = bytearray(_U32.pack(len(entries)))
    for e in entries:
        out += wire.encode(wire.WString(e.channel))
        out.append((1 if e.has_publisher else 0) | (2 if e.has_subscriber else 0))
        out += wire.encode(wire.WString(e.type_name))
    return build_frame(FT_TABLE, bytes(out))

def parse_table(payload: bytes) -> list[ChannelTableEntry]:
    try:
        count = _U32.unpack_from(payload, 0)[0]
        offset = 4
        entries = []
        for _ in range(count):
            channel, offset = wire.decode(payload, offset)
            flags = payload[offset]
            offset += 1
            type_name, offset = wire.decode(payload, offset)
            entries.append(ChannelTableEntry(
                channel=channel.value,
                has_publisher=bool(flags & 1),
                has_subscriber=bool(flags & 2),
                type_name=type_name.value,
            ))
        if offset != len(payload):
            raise MalformedFrame("trailing bytes in TABLE")
        return entries
    except (wire.TruncatedInput, wire.UnknownTag, IndexError, struct.error) as exc:
        raise MalformedFrame(f"bad TABLE payload: {exc}") from None

def build_data(channel: str, sequence: int, timestamp_ms: int, value_bytes: bytes) -> bytes:
    payload = wire.encode(wire.WString(channel)) + _U64.pack(sequence) + _I64.pack(timestamp_ms) + value_bytes
    return build_frame(FT_DATA, payload)

def parse_data(payload: bytes) -> tuple[str, int, int, wire.WireValue]:
    try:
        channel, offset = wire.decode(payload, 0)
        sequence = _U64.unpack_from(payload, offset)[0]
        timestamp_ms = _I64.unpack_from(payload, offset + 8)[0]
        value, offset = wire.decode(payload, offset + 16)
        if offset != len(payload):
            raise MalformedFrame("trailing bytes in DATA")
        return channel.value, sequence, timestamp_ms, value
    except (wire.TruncatedInput, wire.UnknownTag, wire.InvalidUtf8, struct.error) as exc:
        raise MalformedFrame(f"bad DATA payload: {exc}") from None


def split_frames(data: bytes) -> list[tuple[int, bytes]]:
    """Parse a byte string that is a concatenation of whole frames."""
    frames = []
    offset = 0
    while offset < len(data):
        if len(data) - offset < _HEADER.size:
            raise MalformedFrame("truncated frame header")
        magic, frame_type, length = _HEADER.unpack_from(data, offset)
        if magic != MAGIC:
            raise MalformedFrame(f"bad magic {magic!r}")
        offset += _HEADER.size
        if len(data) - offset < length:
            raise MalformedFrame("truncated frame payload")
        frames.append((frame_type, data[offset:offset + length]))
        offset += length
    return frames


class TokenBucket:
    """Byte-rate limiter in virtual time; None rate means unlimited."""

    def __init__(self, clock):
        self._clock = clock
        self._rate: Optional[float] = None  # bytes per virtual second
        self._tokens = 0.0
        self._last_ms = clock.now_ms()
        self._lock = threading.Lock()

    def set_rate(self, bytes_per_virtual_second: Optional[float]) -> None:
        with self._lock:
            self._rate = bytes_per_virtual_second
            self._tokens = 0.0
            self._last_ms = self._clock.now_ms()

    def consume(self, n: int) -> None:
        while True:
            with self._lock:
                if self._rate is None:
                    return
                now = self._clock.now_ms()
                self._tokens = min(
                    self._rate,  # burst capacity: one virtual second
                    self._tokens + (now - self._last_ms) / 1000.0 * self._rate,
                )
                self._last_ms = now
                if self._tokens >= n or self._tokens >= self._rate:
                    self._tokens -= n
                    return
                deficit = n - self._tokens
                rate = self._rate
            wait_virtual_s = deficit / rate
            time.sleep(min(wait_virtual_s / self._clock.time_scale, 0.2))


class Link:
    """One TCP connection to a peer: handshake, reader/writer threads."""

    def __init__(self, runtime: Runtime, router: "Router"):
        self.runtime = runtime
        self.router = router
        self.peer = PeerState()
        self.bucket = TokenBucket(runtime.clock)
        self._sock: Optional[socket.socket] = None
        self._send_queue: deque = deque()
        self._send_cond = threading.Condition()
        self._writer: Optional[threading.Thread] = None
        self._reader: Optional[threading.Thread] = None
        self._hello_seen = False
        self._table_seen = False
        self._outstanding_pings = 0
        self._state_cond = threading.Condition()
        self._closed = False

    # -- connection lifecycle --

    def attach(self, sock: socket.socket) -> None:
        # A link object survives reconnects (the peer's table and dropped
        # count persist); make sure the previous connection's threads are
        # gone before resetting state.
        for old in (self._writer, self._reader):
            if old is not None and old.is_alive() and old is not threading.current_thread():
                old.join(timeout=2.0)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._closed = False
        self._hello_seen = False
        self._table_seen = False
        self._outstanding_pings = 0
        self._send_raw(build_hello(self.runtime.instance_id))
        self._send_raw(build_table(self.router.local_entries()))
        self._writer = threading.Thread(target=self._write_loop, daemon=True,
                                        name=f"net-w-{self.runtime.instance_id}")
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name=f"net-r-{self.runtime.instance_id}")
        self._writer.start()
        self._reader.start()

    def close(self) -> None:
        with self._state_cond:
            if self._closed:
                return
            self._closed = True
            self.peer.connected = False
            self._state_cond.notify_all()
        sock = self._sock
        if sock is not None:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                sock.close()
            except OSError:
                pass
        with self._send_cond:
            self._send_queue.clear()
            self._send_cond.notify_all()
        self.router.on_link_down(self)

    def wait_connected(self, timeout: float = 10.0) -> bool:
        deadline = time.monotonic() + timeout
        with self._state_cond:
            while not self.peer.connected:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._state_cond.wait(timeout=remaining)
        return True

    # -- sending --

    def _send_raw(self, data: bytes) -> None:
        with self._send_cond:
            self._send_queue.append(data)
            self._send_cond.notify()

    def send_table(self) -> None:
        if not self._closed:
            self._send_raw(build_table(self.router.local_entries()))

    def send_data(self, envelope: Envelope, value_bytes: bytes) -> None:
        self._send_raw(build_data(envelope.channel, envelope.sequence,
                                  envelope.timestamp_ms, value_bytes))

    def send_ping(self) -> None:
        if self.peer.connected:
            self._outstanding_pings += 1
            if self._outstanding_pings > MAX_MISSED_PONGS:
                log.warning("peer %s unresponsive, dropping link", self.peer.peer_instance_id)
                self.close()
                return
            self._send_raw(build_frame(FT_PING, b""))

    def _write_loop(self) -> None:
        sock = self._sock
        while True:
            with self._send_cond:
                while not self._send_queue and not self._closed:
                    self._send_cond.wait(timeout=0.5)
                if self._closed:
                    return
                data = self._send_queue.popleft()
            try:
                self.bucket.consume(len(data))
                sock.sendall(data)
            except OSError:
                self.close()
                return

    # -- receiving --

    def _read_exact(self, n: int, buf: bytearray) -> Optional[bytes]:
        while len(buf) < n:
            try:
                chunk = self._sock.recv(65536)
            except OSError:
                return None
            if not chunk:
                return None
            buf += chunk
        out = bytes(buf[:n])
        del buf[:n]
        return out

    def _read_loop(self) -> None:
        buf = bytearray()
        while not self._closed:
            header = self._read_exact(_HEADER.size, buf)
            if header is None:
                self.close()
                return
            magic, frame_type, length = _HEADER.unpack(header)
            if magic != MAGIC:
                log.error("bad frame magic from %s, resetting", self.peer.peer_instance_id)
                self.close()
                return
            payload = self._read_exact(length, buf) if length else b""
            if payload is None:
                self.close()
                return
            try:
                self._on_frame(frame_type, payload)
            except MalformedFrame as exc:
                log.error("malformed frame from %s: %s", self.peer.peer_instance_id, exc)
                self.close()
                return

    def _on_frame(self, frame_type: int, payload: bytes) -> None:
        self._outstanding_pings = 0  # any traffic proves liveness
        if frame_type == FT_HELLO:
            version, instance_id = parse_hello(payload)
            if version != PROTOCOL_VERSION:
                log.error("protocol version mismatch from %s: %d", instance_id, version)
                self.close()
                return
            self.peer.peer_instance_id = instance_id
            self._hello_seen = True
            self._maybe_connected()
        elif frame_type == FT_TABLE:
            entries = parse_table(payload)
            self.peer.remote_table = {e.channel: e for e in entries}
            self._table_seen = True
            self._maybe_connected()
        elif frame_type == FT_DATA:
            channel, sequence, timestamp_ms, value = parse_data(payload)
            envelope = Envelope(
                channel=channel,
                payload=value,
                type_name=wire.type_name_of(value),
                sequence=sequence,
                timestamp_ms=timestamp_ms,
                origin_instance=self.peer.peer_instance_id,
            )
            if not self.runtime.inject_remote(envelope):
                log.warning("dropping frame for unknown channel/type %r", channel)
        elif frame_type == FT_PING:
            self._send_raw(build_frame(FT_PONG, b""))
        elif frame_type == FT_PONG:
            pass
        else:
            raise MalformedFrame(f"unknown frame type 0x{frame_type:02X}")

    def _maybe_connected(self) -> None:
        if self._hello_seen and self._table_seen and not self.peer.connected:
            with self._state_cond:
                self.peer.connected = True
                self._state_cond.notify_all()
            self.router.on_link_up(self)

    # -- routing helpers --

    def wants(self, channel: str) -> bool:
        entry = self.peer.remote_table.get(channel)
        return entry is not None and entry.has_subscriber


class Router:
    """Runtime-side registry of links; routes posts to interested peers."""

    def __init__(self, runtime: Runtime):
        self.runtime = runtime
        self._links: list[Link] = []
        self._lock = threading.Lock()

    @staticmethod
    def ensure(runtime: Runtime) -> "Router":
        if runtime.router is None:
            runtime.router = Router(runtime)
        return runtime.router

    def add_link(self, link: Link) -> None:
        with self._lock:
            self._links.append(link)

    def remove_link(self, link: Link) -> None:
        with self._lock:
            if link in self._links:
                self._links.remove(link)

    def links(self) -> list[Link]:
        with self._lock:
            return list(self._links)

    def local_entries(self) -> list[ChannelTableEntry]:
        return [ChannelTableEntry(name, pub, sub, type_name)
                for name, pub, sub, type_name in self.runtime.channel_table()]

    def peer_wants(self, channel: str) -> bool:
        return any(l.peer.connected and l.wants(channel) for l in self.links())

    def peer_publishes(self, channel: str) -> bool:
        for link in self.links():
            entry = link.peer.remote_table.get(channel)
            if link.peer.connected and entry is not None and entry.has_publisher:
                return True
        return False

    def on_table_change(self) -> None:
        for link in self.links():
            if link.peer.connected:
                link.send_table()

    def on_link_up(self, link: Link) -> None:
        link.send_table()

    def on_link_down(self, link: Link) -> None:
        pass

    def on_local_post(self, envelope: Envelope) -> None:
        value_bytes = None
        for link in self.links():
            if not link.wants(envelope.channel):
                continue
            if not link.peer.connected:
                link.peer.dropped_count += 1
                continue
            if value_bytes is None:
                value_bytes = wire.encode(envelope.payload)
            link.send_data(envelope, value_bytes)

    def connected_peers(self) -> list[PeerState]:
        return [l.peer for l in self.links() if l.peer.connected]

    def shutdown(self) -> None:
        for link in self.links():
            link.close()


def route_destinations(channel: str, peers: list[PeerState]) -> list[PeerState]:
    """Connected peers whose table advertises a subscriber for the channel.

    Disconnected peers that would have received the envelope get their
    dropped count incremented instead.
    """
    out = []
    for peer in peers:
        entry = peer.remote_table.get(channel)
        if entry is None or not entry.has_subscriber:
            continue
        if peer.connected:
            out.append(peer)
        else:
            peer.dropped_count += 1
    return out


class NetworkServerModule(Module):
    """Accepts peer connections on a TCP port (property `Port`, 0 = ephemeral)."""

    def __init__(self):
        super().__init__()
        self.port: int = 0
        self._listener: Optional[socket.socket] = None
        self._accept_thread: Optional[threading.Thread] = None
        self.links: list[Link] = []
        self._stopping = False

    def initialize(self):
        router = Router.ensure(self.runtime)
        port = int(self.prop("Port", 0))
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind(("0.0.0.0", port))
        except OSError as exc:
            listener.close()
            raise PortInUse(f"port {port} unavailable: {exc}") from None
        listener.listen(16)
        self._listener = listener
        self.port = listener.getsockname()[1]
        self._accept_thread = threading.Thread(
            target=self._accept_loop, args=(router,), daemon=True,
            name=f"accept-{self.runtime.instance_id}")
        self._accept_thread.start()
        self.register_periodic(PING_INTERVAL_MS, self._ping_all)

    def _accept_loop(self, router: Router) -> None:
        while not self._stopping:
            try:
                sock, _addr = self._listener.accept()
            except OSError:
                return
            link = Link(self.runtime, router)
            router.add_link(link)
            self.links.append(link)
            link.attach(sock)

    def _ping_all(self):
        for link in list(self.links):
            link.send_ping()

    def terminate(self):
        self._stopping = True
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        for link in list(self.links):
            link.close()


class NetworkClientModule(Module):
    """Maintains one outgoing connection (property `ConnectTo` = host:port).

    Retries forever at `RetryIntervalMs` (real milliseconds). An optional
    `link_gate` callable models physical connectivity: while it returns
    False the client neither connects nor keeps an existing connection.
    """

    def __init__(self):
        super().__init__()
        self.link: Optional[Link] = None
        self.link_gate: Callable[[], bool] = lambda: True
        self._connector: Optional[threading.Thread] = None
        self._stopping = False

    def initialize(self):
        router = Router.ensure(self.runtime)
        target = self.prop("ConnectTo")
        if not target or ":" not in str(target):
            raise ValueError(f"ConnectTo must be host:port, got {target!r}")
        host, port_text = str(target).rsplit(":", 1)
        self._host, self._port = host, int(port_text)
        self._retry_s = float(self.prop("RetryIntervalMs", 5000)) / 1000.0
        self.link = Link(self.runtime, router)
        router.add_link(self.link)
        self._connector = threading.Thread(target=self._connect_loop, daemon=True,
                                           name=f"connect-{self.runtime.instance_id}")
        self._connector.start()
        self.register_periodic(PING_INTERVAL_MS, self._ping)

    def _connect_loop(self):
        while not self._stopping:
            if not self.link_gate():
                time.sleep(0.02)
                continue
            sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            try:
                sock.settimeout(5.0)
                sock.connect((self._host, self._port))
                sock.settimeout(None)
            except OSError:
                sock.close()
                self._sleep_retry()
                continue
            self.link.attach(sock)
            # block until this connection dies
            while not self.link._closed and not self._stopping:
                if not self.link_gate():
                    self.link.close()
                    break
                time.sleep(0.02)
            self._sleep_retry()

    def _sleep_retry(self):
        deadline = time.monotonic() + self._retry_s
        while not self._stopping and time.monotonic() < deadline:
            time.sleep(min(0.05, self._retry_s))

    def _ping(self):
        if self.link is not None:
            self.link.send_ping()

    def set_bandwidth(self, bytes_per_virtual_second: Optional[float]) -> None:
        if self.link is not None:
            self.link.bucket.set_rate(bytes_per_virtual_second)

    def wait_connected(self, timeout: float = 10.0) -> bool:
        return self.link.wait_connected(timeout)

    def terminate(self):
        self._stopping = True
        if self.link is not None:
            self.link.close()
