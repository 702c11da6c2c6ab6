/**
 * Self-describing binary value encoding, byte-compatible with the native
 * runtime.
 *
 * Tags: 0x00 null, 0x01 bool, 0x02 int64, 0x03 float64, 0x04 string,
 * 0x05 bytes, 0x06 list, 0x07 map (keys sorted by UTF-8 bytes), 0x08 struct
 * (type name + fields in declaration order). All integers big-endian.
 */

export const TAG_NULL = 0x00;
export const TAG_BOOL = 0x01;
export const TAG_INT = 0x02;
export const TAG_FLOAT = 0x03;
export const TAG_STRING = 0x04;
export const TAG_BYTES = 0x05;
export const TAG_LIST = 0x06;
export const TAG_MAP = 0x07;
export const TAG_STRUCT = 0x08;

export type WireValue =
  | { kind: "null" }
  | { kind: "bool"; value: boolean }
  | { kind: "int"; value: bigint }
  | { kind: "float"; value: number }
  | { kind: "string"; value: string }
  | { kind: "bytes"; value: Uint8Array }
  | { kind: "list"; items: WireValue[] }
  | { kind: "map"; entries: Map<string, WireValue> }
  | { kind: "struct"; typeName: string; fields: Map<string, WireValue> };

export const wnull = (): WireValue => ({ kind: "null" });
export const wbool = (value: boolean): WireValue => ({ kind: "bool", value });
export const wint = (value: bigint | number): WireValue => ({
  kind: "int",
  value: typeof value === "bigint" ? value : BigInt(value),
});
export const wfloat = (value: number): WireValue => ({ kind: "float", value });
export const wstring = (value: string): WireValue => ({ kind: "string", value });
export const wbytes = (value: Uint8Array): WireValue => ({ kind: "bytes", value });
export const wlist = (items: WireValue[]): WireValue => ({ kind: "list", items });
export const wstruct = (
  typeName: string,
  fields: [string, WireValue][],
): WireValue => ({ kind: "struct", typeName, fields: new Map(fields) });

export class WireError extends Error {}
export class TruncatedInput extends WireError {}
export class UnknownTag extends WireError {}

export function typeNameOf(value: WireValue): string {
  switch (value.kind) {
    case "null": return "Null";
    case "bool": return "Bool";
    case "int": return "Int";
    case "float": return "Float";
    case "string": return "String";
    case "bytes": return "Bytes";
    case "list": return "List";
    case "map": return "Map";
    case "struct": return value.typeName;
  }
}

class Writer {
  private buf = new Uint8Array(256);
  private len = 0;

  private grow(extra: number): void {
    if (this.len + extra <= this.buf.length) return;
    let size = this.buf.length * 2;
    while (size < this.len + extra) size *= 2;
    const next = new Uint8Array(size);
    next.set(this.buf.subarray(0, this.len));
    this.buf = next;
  }

  byte(value: number): void {
    this.grow(1);
    this.buf[this.len++] = value;
  }

  bytes(data: Uint8Array): void {
    this.grow(data.length);
    this.buf.set(data, this.len);
    this.len += data.length;
  }

  u32(value: number): void {
    this.grow(4);
    const view = new DataView(this.buf.buffer, this.buf.byteOffset + this.len, 4);
    view.setUint32(0, value, false);
    this.len += 4;
  }

  i64(value: bigint): void {
    this.grow(8);
    const view = new DataView(this.buf.buffer, this.buf.byteOffset + this.len, 8);
    view.setBigInt64(0, value, false);
    this.len += 8;
  }

  f64(value: number): void {
    this.grow(8);
    const view = new DataView(this.buf.buffer, this.buf.byteOffset + this.len, 8);
    view.setFloat64(0, value, false);
    this.len += 8;
  }

  finish(): Uint8Array {
    return this.buf.slice(0, this.len);
  }
}

const utf8 = new TextEncoder();
const utf8Decode = new TextDecoder("utf-8", { fatal: true });

function compareBytes(a: Uint8Array, b: Uint8Array): number {
  const n = Math.min(a.length, b.length);
  for (let i = 0; i < n; i++) {
    if (a[i] !== b[i]) return a[i] - b[i];
  }
  return a.length - b.length;
}

function encodeString(writer: Writer, text: string): void {
  const raw = utf8.encode(text);
  writer.byte(TAG_STRING);
  writer.u32(raw.length);
  writer.bytes(raw);
}

function encodeInto(writer: Writer, value: WireValue): void {
  switch (value.kind) {
    case "null":
      writer.byte(TAG_NULL);
      return;
    case "bool":
      writer.byte(TAG_BOOL);
      writer.byte(value.value ? 1 : 0);
      return;
    case "int":
      writer.byte(TAG_INT);
      writer.i64(value.value);
      return;
    case "float":
      writer.byte(TAG_FLOAT);
      writer.f64(value.value);
      return;
    case "string":
      encodeString(writer, value.value);
      return;
    case "bytes":
      writer.byte(TAG_BYTES);
      writer.u32(value.value.length);
      writer.bytes(value.value);
      return;
    case "list":
      writer.byte(TAG_LIST);
      writer.u32(value.items.length);
      for (const item of value.items) encodeInto(writer, item);
      return;
    case "map": {
      writer.byte(TAG_MAP);
      writer.u32(value.entries.size);
      const keys = [...value.entries.keys()]
        .map((key) => ({ key, raw: utf8.encode(key) }))
        .sort((a, b) => compareBytes(a.raw, b.raw));
      for (const { key } of keys) {
        encodeString(writer, key);
        encodeInto(writer, value.entries.get(key)!);
      }
      return;
    }
    case "struct":
      writer.byte(TAG_STRUCT);
      encodeString(writer, value.typeName);
      writer.u32(value.fields.size);
      for (const [name, field] of value.fields) {
        encodeString(writer, name);
        encodeInto(writer, field);
      }
      return;
  }
}

export function encode(value: WireValue): Uint8Array {
  const writer = new Writer();
  encodeInto(writer, value);
  return writer.finish();
}

function need(data: Uint8Array, offset: number, n: number): void {
  if (offset + n > data.length) {
    throw new TruncatedInput(`need ${n} bytes at ${offset}, have ${data.length - offset}`);
  }
}

function readU32(data: Uint8Array, offset: number): number {
  need(data, offset, 4);
  return new DataView(data.buffer, data.byteOffset + offset, 4).getUint32(0, false);
}

function readString(data: Uint8Array, offset: number): [string, number] {
  need(data, offset, 1);
  if (data[offset] !== TAG_STRING) {
    throw new UnknownTag(`expected string tag at ${offset}, got 0x${data[offset].toString(16)}`);
  }
  const length = readU32(data, offset + 1);
  need(data, offset + 5, length);
  const raw = data.subarray(offset + 5, offset + 5 + length);
  return [utf8Decode.decode(raw), offset + 5 + length];
}

export function decode(data: Uint8Array, offset = 0): [WireValue, number] {
  need(data, offset, 1);
  const tag = data[offset];
  offset += 1;
  switch (tag) {
    case TAG_NULL:
      return [wnull(), offset];
    case TAG_BOOL:
      need(data, offset, 1);
      return [wbool(data[offset] !== 0), offset + 1];
    case TAG_INT: {
      need(data, offset, 8);
      const view = new DataView(data.buffer, data.byteOffset + offset, 8);
      return [wint(view.getBigInt64(0, false)), offset + 8];
    }
    case TAG_FLOAT: {
      need(data, offset, 8);
      const view = new DataView(data.buffer, data.byteOffset + offset, 8);
      return [wfloat(view.getFloat64(0, false)), offset + 8];
    }
    case TAG_STRING: {
      const [text, next] = readString(data, offset - 1);
      return [wstring(text), next];
    }
    case TAG_BYTES: {
      const length = readU32(data, offset);
      need(data, offset + 4, length);
      return [wbytes(data.slice(offset + 4, offset + 4 + length)), offset + 4 + length];
    }
    case TAG_LIST: {
      const count = readU32(data, offset);
      offset += 4;
      const items: WireValue[] = [];
      for (let i = 0; i < count; i++) {
        const [item, next] = decode(data, offset);
        items.push(item);
        offset = next;
      }
      return [wlist(items), offset];
    }
    case TAG_MAP: {
      const count = readU32(data, offset);
      offset += 4;
      const entries = new Map<string, WireValue>();
      for (let i = 0; i < count; i++) {
        const [key, afterKey] = readString(data, offset);
        const [item, next] = decode(data, afterKey);
        entries.set(key, item);
        offset = next;
      }
      return [{ kind: "map", entries }, offset];
    }
    case TAG_STRUCT: {
      const [typeName, afterName] = readString(data, offset);
      const count = readU32(data, afterName);
      offset = afterName + 4;
      const fields = new Map<string, WireValue>();
      for (let i = 0; i < count; i++) {
        const [name, afterKey] = readString(data, offset);
        const [item, next] = decode(data, afterKey);
        fields.set(name, item);
        offset = next;
      }
      return [{ kind: "struct", typeName, fields }, offset];
    }
    default:
      throw new UnknownTag(`unknown tag 0x${tag.toString(16)} at ${offset - 1}`);
  }
}

export function decodeExact(data: Uint8Array): WireValue {
  const [value, offset] = decode(data, 0);
  if (offset !== data.length) {
    throw new TruncatedInput(`${data.length - offset} unconsumed trailing bytes`);
  }
  return value;
}

// Convenience accessors for struct-shaped messages.

export function field(value: WireValue, name: string): WireValue {
  if (value.kind !== "struct") throw new WireError(`not a struct: ${value.kind}`);
  const got = value.fields.get(name);
  if (got === undefined) throw new WireError(`missing field ${name}`);
  return got;
}

export function intField(value: WireValue, name: string): number {
  const got = field(value, name);
  if (got.kind !== "int") throw new WireError(`field ${name} is not an int`);
  return Number(got.value);
}

export function floatField(value: WireValue, name: string): number {
  const got = field(value, name);
  if (got.kind !== "float") throw new WireError(`field ${name} is not a float`);
  return got.value;
}

export function stringField(value: WireValue, name: string): string {
  const got = field(value, name);
  if (got.kind !== "string") throw new WireError(`field ${name} is not a string`);
  return got.value;
}

export function listField(value: WireValue, name: string): WireValue[] {
  const got = field(value, name);
  if (got.kind !== "list") throw new WireError(`field ${name} is not a list`);
  return got.items;
}

export function floatListField(value: WireValue, name: string): number[] {
  return listField(value, name).map((item) => {
    if (item.kind !== "float") throw new WireError(`non-float in ${name}`);
    return item.value;
  });
}

export function intListField(value: WireValue, name: string): number[] {
  return listField(value, name).map((item) => {
    if (item.kind !== "int") throw new WireError(`non-int in ${name}`);
    return Number(item.value);
  });
}
