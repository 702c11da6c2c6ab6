"""Resumable directory synchronization over channels.

The uploading side periodically offers a manifest of its storage directory
("SyncRequest"); the receiving side diffs it against what it already holds
and answers with the paths it wants ("SyncResponse"); the uploader then
sends each wanted file as one message ("SyncFile") and the receiver
acknowledges stored files ("SyncAck"). Every message carries the user
identifier, so one receiver serves many uploaders.

Files travel whole: a transfer cut mid-file never leaves a partial file at
the receiver, it is simply re-sent in the next session. Sessions are
idempotent — with no new data the diff is empty and nothing is sent.
"""
from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass

from ..config import parse_duration_ms
from ..errors import InvalidProperty
from ..runtime import Module
from ..wire import WBytes, WInt, WList, WString, WStruct

log = logging.getLogger(__name__)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, value: int = _FNV_OFFSET) -> int:
    for byte in data:
        value = ((value ^ byte) * _FNV_PRIME) & _U64_MASK
    return value


def fnv1a64_file(path: str) -> int:
    value = _FNV_OFFSET
    with open(path, "rb") as fh:
        while True:
            block = fh.read(1 << 20)
            if not block:
                return value
            value = fnv1a64(block, value)


@dataclass(frozen=True)
class ManifestEntry:
    rel_path: str
    size_bytes: int
    checksum: int  # unsigned 64-bit FNV-1a


def build_manifest(directory: str, cache: "ManifestCache | None" = None) -> list[ManifestEntry]:
    """Manifest of every regular file below `directory`, sorted by path."""
    entries = []
    for root, _dirs, files in os.walk(directory):
        for name in files:
            full = os.path.join(root, name)
            rel = os.path.relpath(full, directory).replace(os.sep, "/")
            try:
                stat = os.stat(full)
            except OSError:
                continue
            if cache is not None:
                checksum = cache.checksum(full, rel, stat)
            else:
                checksum = fnv1a64_file(full)
            entries.append(ManifestEntry(rel, stat.st_size, checksum))
    entries.sort(key=lambda e: e.rel_path)
    return entries


class ManifestCache:
    """Avoids re-hashing files whose size and mtime have not changed."""

    def __init__(self):
        self._seen: dict[str, tuple[int, int, int]] = {}

    def checksum(self, full_path: str, rel_path: str, stat: os.stat_result) -> int:
        cached = self._seen.get(rel_path)
        if cached is not None and cached[0] == stat.st_size and cached[1] == stat.st_mtime_ns:
            return cached[2]
        value = fnv1a64_file(full_path)
        self._seen[rel_path] = (stat.st_size, stat.st_mtime_ns, value)
        return value


def diff_manifests(client: list[ManifestEntry], server: list[ManifestEntry]) -> list[str]:
    """Client paths missing on the server or differing in size/checksum."""
    have = {e.rel_path: e for e in server}
    out = []
    for entry in client:
        held = have.get(entry.rel_path)
        if held is None or held.size_bytes != entry.size_bytes \
                or held.checksum != entry.checksum:
            out.append(entry.rel_path)
    return sorted(out)


def manifests_equal(a: list[ManifestEntry], b: list[ManifestEntry]) -> bool:
    return sorted(a, key=lambda e: e.rel_path) == sorted(b, key=lambda e: e.rel_path)


@dataclass
class SyncStats:
    files_sent: int = 0
    bytes_sent: int = 0
    duration_ms: int = 0


def pack_manifest(entries: list[ManifestEntry]) -> bytes:
    """Compact binary form used inside sync messages.

    One u16-length-prefixed path + u64 size + u64 checksum per entry. A
    day-scale manifest is tens of thousands of entries and travels every
    session, so it goes as one blob rather than per-entry wire structs.
    """
    out = bytearray()
    for entry in entries:
        raw = entry.rel_path.encode("utf-8")
        out += struct.pack(">H", len(raw))
        out += raw
        out += struct.pack(">QQ", entry.size_bytes, entry.checksum)
    return bytes(out)


def unpack_manifest(blob: bytes) -> list[ManifestEntry]:
    entries = []
    offset = 0
    while offset < len(blob):
        (path_len,) = struct.unpack_from(">H", blob, offset)
        offset += 2
        rel_path = blob[offset:offset + path_len].decode("utf-8")
        offset += path_len
        size, checksum = struct.unpack_from(">QQ", blob, offset)
        offset += 16
        entries.append(ManifestEntry(rel_path, size, checksum))
    return entries


class DataSyncModule(Module):
    """Uploads a directory to a peer's DataReceiverModule.

    Properties:
        FilePath        directory to synchronize
        UserIdentifier  tag applied to every message
        SyncPeriod      virtual time between session attempts (default 300s)
    """

    def __init__(self):
        super().__init__()
        self.cache = ManifestCache()
        self.sessions_completed = 0
        self.files_sent_total = 0
        self.bytes_sent_total = 0
        self.last_stats: SyncStats | None = None
        self._session_id = 0
        self._active = False
        self._started_ms = 0
        self._wanted = 0
        self._acked = 0
        self._sent_stats = SyncStats()

    def initialize(self):
        self._dir = str(self.prop("FilePath", ""))
        if not self._dir:
            raise InvalidProperty("DataSyncModule needs FilePath")
        self._user = str(self.prop("UserIdentifier", "User01"))
        period_ms = parse_duration_ms(self.prop("SyncPeriod", "300s"))
        self._request = self.publish("SyncRequest", "SyncRequest")
        self._file = self.publish("SyncFile", "SyncFile")
        self.subscribe("SyncResponse", "SyncResponse", self._on_response)
        self.subscribe("SyncAck", "SyncAck", self._on_ack)
        self._timeout_ms = 2 * period_ms
        self.register_periodic(period_ms, self._maybe_start_session)

    def trigger_sync(self) -> None:
        """Queue an immediate session attempt (used by harnesses and tests)."""
        self._executor.submit(self._maybe_start_session)

    @property
    def idle(self) -> bool:
        return not self._active

    def _peer_ready(self) -> bool:
        return self.runtime.has_any_subscriber("SyncRequest")

    def _maybe_start_session(self):
        now = self.clock.now_ms()
        if self._active:
            if now - self._started_ms > self._timeout_ms:
                log.warning("sync session %d abandoned", self._session_id)
                self._active = False
            else:
                return
        if not os.path.isdir(self._dir) or not self._peer_ready():
            return
        manifest = build_manifest(self._dir, self.cache)
        self._session_id += 1
        self._active = True
        self._started_ms = now
        self._sent_stats = SyncStats()
        self._request.post(WStruct("SyncRequest", {
            "user": WString(self._user),
            "session": WInt(self._session_id),
            "entries": WBytes(pack_manifest(manifest)),
        }))

    def _on_response(self, message: WStruct):
        if message["user"].value != self._user \
                or message["session"].value != self._session_id or not self._active:
            return
        wanted = [item.value for item in message["wanted"].items]
        self._wanted = len(wanted)
        self._acked = 0
        for rel_path in wanted:
            if not self._peer_ready():
                log.warning("peer lost mid-session, aborting")
                self._active = False
                return
            full = os.path.join(self._dir, rel_path.replace("/", os.sep))
            try:
                with open(full, "rb") as fh:
                    data = fh.read()
            except OSError:
                continue  # rotated away; next session re-offers
            self._file.post(WStruct("SyncFile", {
                "user": WString(self._user),
                "session": WInt(self._session_id),
                "path": WString(rel_path),
                "data": WBytes(data),
            }))
            self._sent_stats.files_sent += 1
            self._sent_stats.bytes_sent += len(data)
        if self._wanted == 0:
            self._finish()

    def _on_ack(self, message: WStruct):
        if message["session"].value != self._session_id or not self._active:
            return
        self._acked += 1
        if self._acked >= self._wanted:
            self._finish()

    def _finish(self):
        self._active = False
        self.sessions_completed += 1
        self.files_sent_total += self._sent_stats.files_sent
        self.bytes_sent_total += self._sent_stats.bytes_sent
        self._sent_stats.duration_ms = self.clock.now_ms() - self._started_ms
        self.last_stats = self._sent_stats


class DataReceiverModule(Module):
    """Stores uploaded files under `<StoragePath>/<user>/` and records the
    virtual arrival time of every file in `<StoragePath>/arrivals.csv`."""

    def __init__(self):
        super().__init__()
        self.files_received = 0
        self.bytes_received = 0
        self.arrivals: list[tuple[str, str, int]] = []  # (user, rel_path, arrival_ms)
        self._caches: dict[str, ManifestCache] = {}

    def initialize(self):
        self._root = str(self.prop("StoragePath", ""))
        if not self._root:
            raise InvalidProperty("DataReceiverModule needs StoragePath")
        os.makedirs(self._root, exist_ok=True)
        self._arrivals_path = os.path.join(self._root, "arrivals.csv")
        self.subscribe("SyncRequest", "SyncRequest", self._on_request)
        self.subscribe("SyncFile", "SyncFile", self._on_file)
        self._response = self.publish("SyncResponse", "SyncResponse")
        self._ack = self.publish("SyncAck", "SyncAck")

    def user_dir(self, user: str) -> str:
        return os.path.join(self._root, user)

    def manifest_for(self, user: str) -> list[ManifestEntry]:
        """Manifest of a user's stored tree, reusing the incremental cache.

        Intended for end-of-run verification while sessions are quiet.
        """
        directory = self.user_dir(user)
        if not os.path.isdir(directory):
            return []
        cache = self._caches.setdefault(user, ManifestCache())
        return build_manifest(directory, cache)

    def _on_request(self, message: WStruct):
        user = message["user"].value
        client_entries = unpack_manifest(message["entries"].value)
        cache = self._caches.setdefault(user, ManifestCache())
        server_entries = build_manifest(self.user_dir(user), cache) \
            if os.path.isdir(self.user_dir(user)) else []
        wanted = diff_manifests(client_entries, server_entries)
        self._response.post(WStruct("SyncResponse", {
            "user": WString(user),
            "session": message["session"],
            "wanted": WList([WString(p) for p in wanted]),
        }))

    def _on_file(self, message: WStruct):
        user = message["user"].value
        rel_path = message["path"].value
        if os.path.isabs(rel_path) or ".." in rel_path.split("/"):
            log.error("rejecting unsafe sync path %r", rel_path)
            return
        data = message["data"].value
        target = os.path.join(self.user_dir(user), rel_path.replace("/", os.sep))
        os.makedirs(os.path.dirname(target), exist_ok=True)
        part = f"{target}.part"
        with open(part, "wb") as fh:
            fh.write(data)
        os.replace(part, target)
        arrival_ms = self.clock.now_ms()
        self.files_received += 1
        self.bytes_received += len(data)
        self.arrivals.append((user, rel_path, arrival_ms))
        with open(self._arrivals_path, "a", encoding="utf-8") as fh:
            fh.write(f"{user},{rel_path},{arrival_ms}\n")
        self._ack.post(WStruct("SyncAck", {
            "user": WString(user),
            "session": message["session"],
            "path": WString(rel_path),
        }))
