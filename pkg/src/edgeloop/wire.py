"""Self-describing binary encoding for channel payloads.

Values are a tagged union (null, bool, int64, float64, utf-8 string, bytes,
list, string-keyed map, named struct). The encoding is canonical: a given
value always produces the same bytes, map entries are sorted by raw key
bytes, and all multi-byte integers are big-endian. The same byte format is
used on the network wire and in on-disk record files.

Tag table:
    0x00 null
    0x01 bool    (1 byte, 0 or 1)
    0x02 int     (8 bytes, signed big-endian)
    0x03 float   (8 bytes, IEEE-754 binary64 big-endian)
    0x04 string  (u32 length + utf-8 bytes)
    0x05 bytes   (u32 length + raw bytes)
    0x06 list    (u32 count + encoded elements)
    0x07 map     (u32 count + (string key, value) pairs sorted by key bytes)
    0x08 struct  (string type name + u32 field count + (string name, value)
                  pairs in declaration order)
"""
from __future__ import annotations

import struct
from typing import Union

import numpy as np

from .errors import InvalidUtf8, TruncatedInput, UnknownTag

TAG_NULL = 0x00
TAG_BOOL = 0x01
TAG_INT = 0x02
TAG_FLOAT = 0x03
TAG_STRING = 0x04
TAG_BYTES = 0x05
TAG_LIST = 0x06
TAG_MAP = 0x07
TAG_STRUCT = 0x08

_U32 = struct.Struct(">I")
_I64 = struct.Struct(">q")
_F64 = struct.Struct(">d")
_U16 = struct.Struct(">H")

# Bulk encode/decode kicks in for float lists at least this long.
_FAST_LIST_MIN = 64


def _float_bits(x: float) -> int:
    return struct.unpack(">Q", _F64.pack(x))[0]


class WNull:
    __slots__ = ()

    def __eq__(self, other):
        return isinstance(other, WNull)

    def __hash__(self):
        return hash(WNull)

    def __repr__(self):
        return "WNull()"


class WBool:
    __slots__ = ("value",)

    def __init__(self, value: bool):
        self.value = bool(value)

    def __eq__(self, other):
        return isinstance(other, WBool) and self.value == other.value

    def __hash__(self):
        return hash((WBool, self.value))

    def __repr__(self):
        return f"WBool({self.value!r})"


class WInt:
    __slots__ = ("value",)

    def __init__(self, value: int):
        self.value = int(value)

    def __eq__(self, other):
        return isinstance(other, WInt) and self.value == other.value

    def __hash__(self):
        return hash((WInt, self.value))

    def __repr__(self):
        return f"WInt({self.value!r})"


class WFloat:
    """64-bit float; equality is bitwise so NaN payloads and -0.0 survive."""

    __slots__ = ("value",)

    def __init__(self, value: float):
        self.value = float(value)

    def __eq__(self, other):
        return isinstance(other, WFloat) and _float_bits(self.value) == _float_bits(other.value)

    def __hash__(self):
        return hash((WFloat, _float_bits(self.value)))

    def __repr__(self):
        return f"WFloat({self.value!r})"


class WString:
    __slots__ = ("value",)

    def __init__(self, value: str):
        self.value = value

    def __eq__(self, other):
        return isinstance(other, WString) and self.value == other.value

    def __hash__(self):
        return hash((WString, self.value))

    def __repr__(self):
        return f"WString({self.value!r})"


class WBytes:
    __slots__ = ("value",)

    def __init__(self, value: bytes):
        self.value = bytes(value)

    def __eq__(self, other):
        return isinstance(other, WBytes) and self.value == other.value

    def __hash__(self):
        return hash((WBytes, self.value))

    def __repr__(self):
        return f"WBytes({self.value!r})"


class WList:
    __slots__ = ("items",)

    def __init__(self, items=()):
        self.items = list(items)

    def __eq__(self, other):
        return isinstance(other, WList) and self.items == other.items

    def __repr__(self):
        return f"WList({self.items!r})"


class WMap:
    """String-keyed map; key order is irrelevant (encoding sorts by key bytes)."""

    __slots__ = ("entries",)

    def __init__(self, entries=None):
        self.entries = dict(entries or {})

    def __eq__(self, other):
        return isinstance(other, WMap) and self.entries == other.entries

    def __repr__(self):
        return f"WMap({self.entries!r})"


class WStruct:
    """Named struct; field order is the declaration order and is preserved."""

    __slots__ = ("type_name", "fields")

    def __init__(self, type_name: str, fields=None):
        self.type_name = type_name
        self.fields = dict(fields or {})

    def __getitem__(self, name: str) -> "WireValue":
        return self.fields[name]

    def get(self, name: str, default=None):
        return self.fields.get(name, default)

    def __eq__(self, other):
        return (
            isinstance(other, WStruct)
            and self.type_name == other.type_name
            and self.fields == other.fields
        )

    def __repr__(self):
        return f"WStruct({self.type_name!r}, {self.fields!r})"


WireValue = Union[WNull, WBool, WInt, WFloat, WString, WBytes, WList, WMap, WStruct]

NULL = WNull()


def type_name_of(value: WireValue) -> str:
    """Channel type name of a value; structs report their own type name."""
    if isinstance(value, WStruct):
        return value.type_name
    return {
        WNull: "Null",
        WBool: "Bool",
        WInt: "Int",
        WFloat: "Float",
        WString: "String",
        WBytes: "Bytes",
        WList: "List",
        WMap: "Map",
    }[type(value)]


# Encoded (tag + length + bytes) forms of recurring strings: field names,
# channel names, struct type names. Bounded to keep memory flat.
_STRING_CACHE: dict[str, bytes] = {}
_STRING_CACHE_MAX = 4096


def _encoded_string(s: str) -> bytes:
    cached = _STRING_CACHE.get(s)
    if cached is None:
        raw = s.encode("utf-8")
        cached = bytes([TAG_STRING]) + _U32.pack(len(raw)) + raw
        if len(_STRING_CACHE) < _STRING_CACHE_MAX and len(s) <= 128:
            _STRING_CACHE[s] = cached
    return cached


def _encode_float_items_bulk(items: list, buf: bytearray) -> None:
    values = np.array([item.value for item in items], dtype=">f8")
    out = np.empty((len(items), 9), dtype=np.uint8)
    out[:, 0] = TAG_FLOAT
    out[:, 1:] = values.view(np.uint8).reshape(len(items), 8)
    buf += out.tobytes()


def _encode_into(value: WireValue, buf: bytearray) -> None:
    if isinstance(value, WStruct):
        buf.append(TAG_STRUCT)
        buf += _encoded_string(value.type_name)
        buf += _U32.pack(len(value.fields))
        for name, field in value.fields.items():
            buf += _encoded_string(name)
            _encode_into(field, buf)
    elif isinstance(value, WFloat):
        buf.append(TAG_FLOAT)
        buf += _F64.pack(value.value)
    elif isinstance(value, WInt):
        buf.append(TAG_INT)
        buf += _I64.pack(value.value)
    elif isinstance(value, WString):
        buf += _encoded_string(value.value)
    elif isinstance(value, WList):
        buf.append(TAG_LIST)
        buf += _U32.pack(len(value.items))
        items = value.items
        if len(items) >= _FAST_LIST_MIN and all(type(i) is WFloat for i in items):
            _encode_float_items_bulk(items, buf)
        else:
            for item in items:
                _encode_into(item, buf)
    elif isinstance(value, WBool):
        buf.append(TAG_BOOL)
        buf.append(1 if value.value else 0)
    elif isinstance(value, WNull):
        buf.append(TAG_NULL)
    elif isinstance(value, WBytes):
        buf.append(TAG_BYTES)
        buf += _U32.pack(len(value.value))
        buf += value.value
    elif isinstance(value, WMap):
        buf.append(TAG_MAP)
        buf += _U32.pack(len(value.entries))
        for key in sorted(value.entries, key=lambda k: k.encode("utf-8")):
            buf += _encoded_string(key)
            _encode_into(value.entries[key], buf)
    else:
        raise TypeError(f"not a wire value: {value!r}")


def encode(value: WireValue) -> bytes:
    """Encode a value to its canonical byte form."""
    buf = bytearray()
    _encode_into(value, buf)
    return bytes(buf)


def _need(data: bytes, offset: int, n: int) -> None:
    if offset + n > len(data):
        raise TruncatedInput(f"need {n} bytes at offset {offset}, have {len(data) - offset}")


def _read_u32(data: bytes, offset: int) -> tuple[int, int]:
    _need(data, offset, 4)
    return _U32.unpack_from(data, offset)[0], offset + 4


def _read_string(data: bytes, offset: int) -> tuple[str, int]:
    _need(data, offset, 1)
    if data[offset] != TAG_STRING:
        raise UnknownTag(f"expected string tag at offset {offset}, got 0x{data[offset]:02X}")
    length, offset = _read_u32(data, offset + 1)
    _need(data, offset, length)
    raw = data[offset:offset + length]
    try:
        return raw.decode("utf-8"), offset + length
    except UnicodeDecodeError as exc:
        raise InvalidUtf8(str(exc)) from None


def _decode_float_items_bulk(data: bytes, offset: int, count: int):
    """Bulk-decode `count` float elements if they are densely tagged; else None."""
    if offset + 9 * count > len(data):
        return None
    block = np.frombuffer(data, dtype=np.uint8, count=9 * count, offset=offset).reshape(count, 9)
    if not (block[:, 0] == TAG_FLOAT).all():
        return None
    values = block[:, 1:].copy().view(">f8").reshape(count)
    return [WFloat(v) for v in values.tolist()], offset + 9 * count


def _decode_at(data: bytes, offset: int) -> tuple[WireValue, int]:
    _need(data, offset, 1)
    tag = data[offset]
    offset += 1
    if tag == TAG_NULL:
        return NULL, offset
    if tag == TAG_BOOL:
        _need(data, offset, 1)
        return WBool(data[offset] != 0), offset + 1
    if tag == TAG_INT:
        _need(data, offset, 8)
        return WInt(_I64.unpack_from(data, offset)[0]), offset + 8
    if tag == TAG_FLOAT:
        _need(data, offset, 8)
        return WFloat(_F64.unpack_from(data, offset)[0]), offset + 8
    if tag == TAG_STRING:
        value, offset = _read_string(data, offset - 1)
        return WString(value), offset
    if tag == TAG_BYTES:
        length, offset = _read_u32(data, offset)
        _need(data, offset, length)
        return WBytes(data[offset:offset + length]), offset + length
    if tag == TAG_LIST:
        count, offset = _read_u32(data, offset)
        if count >= _FAST_LIST_MIN:
            bulk = _decode_float_items_bulk(data, offset, count)
            if bulk is not None:
                return WList(bulk[0]), bulk[1]
        items = []
        for _ in range(count):
            item, offset = _decode_at(data, offset)
            items.append(item)
        return WList(items), offset
    if tag == TAG_MAP:
        count, offset = _read_u32(data, offset)
        entries = {}
        for _ in range(count):
            key, offset = _read_string(data, offset)
            value, offset = _decode_at(data, offset)
            entries[key] = value
        return WMap(entries), offset
    if tag == TAG_STRUCT:
        type_name, offset = _read_string(data, offset)
        count, offset = _read_u32(data, offset)
        fields = {}
        for _ in range(count):
            name, offset = _read_string(data, offset)
            value, offset = _decode_at(data, offset)
            fields[name] = value
        return WStruct(type_name, fields), offset
    raise UnknownTag(f"unknown tag 0x{tag:02X} at offset {offset - 1}")


def decode(data: bytes, offset: int = 0) -> tuple[WireValue, int]:
    """Decode one value starting at `offset`; returns (value, next offset).

    Trailing bytes are left untouched, so concatenated encodings can be
    decoded in sequence.
    """
    return _decode_at(data, offset)


def decode_exact(data: bytes) -> WireValue:
    """Decode a value that must span the whole input."""
    value, offset = _decode_at(data, 0)
    if offset != len(data):
        raise TruncatedInput(f"{len(data) - offset} unconsumed trailing bytes")
    return value


def float_list(values) -> WList:
    return WList([WFloat(v) for v in values])


def float_values(value: WList) -> list[float]:
    return [item.value for item in value.items]
