"""File persistence for channel records.

Scalar and vector records are appended to one file per virtual minute
(`<StoragePath>/<channel>/<YYYYMMDD_HHMM>.rec`, a sequence of u32
length-prefixed encoded records). Audio chunks go to one file each
(`<prefix>_<epoch_ms>.chunk`, a single encoded record, unprefixed).

Saving is decoupled from upload: a stalled link never blocks this module,
which is what keeps persistence lossless across disconnects.
"""
from __future__ import annotations

import errno
import logging
import os
import struct
from datetime import datetime, timezone
from typing import BinaryIO, Iterator

from ..errors import InvalidProperty, StorageFull
from ..runtime import Module
from ..wire import WInt, WStruct, WireValue, decode, encode

log = logging.getLogger(__name__)

_U32 = struct.Struct(">I")


def minute_name(virtual_timestamp_ms: int) -> str:
    dt = datetime.fromtimestamp(virtual_timestamp_ms / 1000.0, tz=timezone.utc)
    return dt.strftime("%Y%m%d_%H%M")


def file_path_for(storage_path: str, channel: str, virtual_timestamp_ms: int) -> str:
    return os.path.join(storage_path, channel, f"{minute_name(virtual_timestamp_ms)}.rec")


def chunk_path_for(prefix: str, epoch_ms: int) -> str:
    sep = "" if prefix.endswith(("_", "/", os.sep)) else "_"
    return f"{prefix}{sep}{epoch_ms}.chunk"


def append_record(fh: BinaryIO, blob: bytes) -> None:
    fh.write(_U32.pack(len(blob)))
    fh.write(blob)


def read_records(path: str) -> Iterator[WireValue]:
    """Iterate the records of a .rec file (u32 length-prefixed blobs)."""
    with open(path, "rb") as fh:
        data = fh.read()
    offset = 0
    while offset < len(data):
        (length,) = _U32.unpack_from(data, offset)
        offset += 4
        value, consumed = decode(data[offset:offset + length])
        yield value
        offset += length


def read_chunk(path: str) -> WireValue:
    with open(path, "rb") as fh:
        value, _ = decode(fh.read())
    return value


class DataSaverModule(Module):
    """Persists configured channels to disk.

    Property `save` is one block or a list of blocks, each with:
        What         channel to subscribe
        StoragePath  directory for .rec files, or filename prefix for chunks
        FileFormat   REC (default, per-minute files) or CHUNK/WAV
                     (one file per record, for audio chunks)
    """

    def __init__(self):
        super().__init__()
        self.records_saved = 0
        self.records_lost = 0
        self.chunks_saved = 0
        self._open_files: dict[tuple[int, str], tuple[str, BinaryIO]] = {}

    def initialize(self):
        blocks = self.prop("save")
        if blocks is None:
            raise InvalidProperty("DataSaverModule needs at least one <save> block")
        if isinstance(blocks, dict):
            blocks = [blocks]
        for block_index, block in enumerate(blocks):
            channel = block.get("What")
            storage = block.get("StoragePath")
            if not channel or not storage:
                raise InvalidProperty("save block needs <What> and <StoragePath>")
            file_format = str(block.get("FileFormat", "REC")).upper()
            if file_format not in ("REC", "CHUNK", "WAV"):
                raise InvalidProperty(f"unknown FileFormat {file_format!r}")
            per_chunk = file_format in ("CHUNK", "WAV")
            self.subscribe(
                channel, "SampleRecord",
                lambda record, b=block_index, c=channel, s=storage, p=per_chunk:
                    self._save(record, b, c, s, p))

    # -- persistence --

    def _stamped(self, record: WStruct) -> WStruct:
        fields = dict(record.fields)
        fields["arrival_timestamp_ms"] = WInt(self.clock.now_ms())
        return WStruct(record.type_name, fields)

    def _save(self, record: WStruct, block_index: int, channel: str,
              storage: str, per_chunk: bool) -> None:
        stamped = self._stamped(record)
        blob = encode(stamped)
        try:
            self._write(blob, stamped, block_index, channel, storage, per_chunk)
            self.records_saved += 1
        except OSError as exc:
            # one retry, then the record counts as lost
            try:
                self._drop_handle(block_index, channel)
                self._write(blob, stamped, block_index, channel, storage, per_chunk)
                self.records_saved += 1
            except OSError as retry_exc:
                self.records_lost += 1
                log.error("record lost on %s: %s", channel, retry_exc)
                if retry_exc.errno == errno.ENOSPC or exc.errno == errno.ENOSPC:
                    raise StorageFull(str(retry_exc)) from None

    def _write(self, blob: bytes, record: WStruct, block_index: int,
               channel: str, storage: str, per_chunk: bool) -> None:
        if per_chunk:
            epoch_ms = record["virtual_timestamp_ms"].value
            path = chunk_path_for(storage, epoch_ms)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "wb") as fh:
                fh.write(blob)
            self.chunks_saved += 1
            return
        ts = record["virtual_timestamp_ms"].value
        path = file_path_for(storage, channel, ts)
        key = (block_index, channel)
        current = self._open_files.get(key)
        if current is None or current[0] != path:
            if current is not None:
                current[1].close()
            os.makedirs(os.path.dirname(path), exist_ok=True)
            fh = open(path, "ab")
            self._open_files[key] = (path, fh)
        else:
            fh = current[1]
        append_record(fh, blob)

    def _drop_handle(self, block_index: int, channel: str) -> None:
        current = self._open_files.pop((block_index, channel), None)
        if current is not None:
            try:
                current[1].close()
            except OSError:
                pass

    def flush(self) -> None:
        for _path, fh in self._open_files.values():
            fh.flush()

    def terminate(self):
        for _path, fh in self._open_files.values():
            try:
                fh.close()
            except OSError:
                pass
        self._open_files.clear()
