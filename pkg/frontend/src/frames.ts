/**
 * TCP frame codec shared with native instances.
 *
 * frame = "CLD1" + type u8 + payload_len u32 + payload
 * HELLO = version u16 (=1) + String instance_id
 * TABLE = count u32 + (String channel + flags u8 + String type_name)*
 * DATA  = String channel + sequence u64 + timestamp_ms i64 + encoded value
 * PING / PONG = empty
 */
import {
  WireValue,
  decode,
  encode,
  wstring,
} from "./wire.js";

export const MAGIC = new Uint8Array([0x43, 0x4c, 0x44, 0x31]); // "CLD1"
export const PROTOCOL_VERSION = 1;

export const FT_HELLO = 0x01;
export const FT_TABLE = 0x02;
export const FT_DATA = 0x03;
export const FT_PING = 0x04;
export const FT_PONG = 0x05;

export class FrameError extends Error {}

export interface TableEntry {
  channel: string;
  hasPublisher: boolean;
  hasSubscriber: boolean;
  typeName: string;
}

export interface DataMessage {
  channel: string;
  sequence: bigint;
  timestampMs: bigint;
  value: WireValue;
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const part of parts) {
    out.set(part, offset);
    offset += part.length;
  }
  return out;
}

export function buildFrame(frameType: number, payload: Uint8Array): Uint8Array {
  const header = new Uint8Array(9);
  header.set(MAGIC, 0);
  header[4] = frameType;
  new DataView(header.buffer).setUint32(5, payload.length, false);
  return concat([header, payload]);
}

export function buildHello(instanceId: string): Uint8Array {
  const version = new Uint8Array(2);
  new DataView(version.buffer).setUint16(0, PROTOCOL_VERSION, false);
  return buildFrame(FT_HELLO, concat([version, encode(wstring(instanceId))]));
}

export function parseHello(payload: Uint8Array): { version: number; instanceId: string } {
  if (payload.length < 2) throw new FrameError("HELLO too short");
  const version = new DataView(payload.buffer, payload.byteOffset, 2).getUint16(0, false);
  const [value] = decode(payload, 2);
  if (value.kind !== "string") throw new FrameError("bad HELLO payload");
  return { version, instanceId: value.value };
}

export function buildTable(entries: TableEntry[]): Uint8Array {
  const parts: Uint8Array[] = [];
  const count = new Uint8Array(4);
  new DataView(count.buffer).setUint32(0, entries.length, false);
  parts.push(count);
  for (const entry of entries) {
    parts.push(encode(wstring(entry.channel)));
    parts.push(new Uint8Array([
      (entry.hasPublisher ? 1 : 0) | (entry.hasSubscriber ? 2 : 0),
    ]));
    parts.push(encode(wstring(entry.typeName)));
  }
  return buildFrame(FT_TABLE, concat(parts));
}

export function parseTable(payload: Uint8Array): TableEntry[] {
  const count = new DataView(payload.buffer, payload.byteOffset, 4).getUint32(0, false);
  let offset = 4;
  const entries: TableEntry[] = [];
  for (let i = 0; i < count; i++) {
    const [channel, afterChannel] = decode(payload, offset);
    const flags = payload[afterChannel];
    const [typeName, next] = decode(payload, afterChannel + 1);
    if (channel.kind !== "string" || typeName.kind !== "string") {
      throw new FrameError("bad TABLE entry");
    }
    entries.push({
      channel: channel.value,
      hasPublisher: (flags & 1) !== 0,
      hasSubscriber: (flags & 2) !== 0,
      typeName: typeName.value,
    });
    offset = next;
  }
  if (offset !== payload.length) throw new FrameError("trailing bytes in TABLE");
  return entries;
}

export function buildData(channel: string, sequence: bigint, timestampMs: bigint,
                          valueBytes: Uint8Array): Uint8Array {
  const numbers = new Uint8Array(16);
  const view = new DataView(numbers.buffer);
  view.setBigUint64(0, sequence, false);
  view.setBigInt64(8, timestampMs, false);
  return buildFrame(FT_DATA, concat([encode(wstring(channel)), numbers, valueBytes]));
}

export function parseData(payload: Uint8Array): DataMessage {
  const [channel, afterChannel] = decode(payload, 0);
  if (channel.kind !== "string") throw new FrameError("bad DATA channel");
  const view = new DataView(payload.buffer, payload.byteOffset + afterChannel, 16);
  const sequence = view.getBigUint64(0, false);
  const timestampMs = view.getBigInt64(8, false);
  const [value, next] = decode(payload, afterChannel + 16);
  if (next !== payload.length) throw new FrameError("trailing bytes in DATA");
  return { channel: channel.value, sequence, timestampMs, value };
}

/** Incremental frame splitter over a byte stream. */
export class FrameReader {
  private buffer = new Uint8Array(0);

  push(chunk: Uint8Array): Array<{ frameType: number; payload: Uint8Array }> {
    const merged = new Uint8Array(this.buffer.length + chunk.length);
    merged.set(this.buffer, 0);
    merged.set(chunk, this.buffer.length);
    this.buffer = merged;
    const frames: Array<{ frameType: number; payload: Uint8Array }> = [];
    let offset = 0;
    while (this.buffer.length - offset >= 9) {
      for (let i = 0; i < 4; i++) {
        if (this.buffer[offset + i] !== MAGIC[i]) {
          throw new FrameError("bad frame magic");
        }
      }
      const frameType = this.buffer[offset + 4];
      const length = new DataView(
        this.buffer.buffer, this.buffer.byteOffset + offset + 5, 4).getUint32(0, false);
      if (this.buffer.length - offset - 9 < length) break;
      frames.push({
        frameType,
        payload: this.buffer.slice(offset + 9, offset + 9 + length),
      });
      offset += 9 + length;
    }
    this.buffer = this.buffer.slice(offset);
    return frames;
  }
}
