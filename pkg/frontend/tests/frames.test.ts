import { describe, expect, it } from "vitest";

import {
  FT_DATA,
  FT_HELLO,
  FT_PING,
  FT_PONG,
  FrameReader,
  buildData,
  buildFrame,
  buildHello,
  buildTable,
  parseData,
  parseHello,
  parseTable,
} from "../src/frames.js";
import { encode, wstring } from "../src/wire.js";

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

describe("frame codec", () => {
  it("ping frame layout", () => {
    const frame = buildFrame(FT_PING, new Uint8Array(0));
    expect([...frame]).toEqual([0x43, 0x4c, 0x44, 0x31, 0x04, 0, 0, 0, 0]);
  });

  it("hello round trip", () => {
    const reader = new FrameReader();
    const frames = reader.push(buildHello("evaluator"));
    expect(frames).toHaveLength(1);
    expect(frames[0].frameType).toBe(FT_HELLO);
    expect(parseHello(frames[0].payload)).toEqual({ version: 1, instanceId: "evaluator" });
  });

  it("table round trip", () => {
    const entries = [
      { channel: "AudioData", hasPublisher: true, hasSubscriber: false, typeName: "AudioChunk" },
      { channel: "DetectedCoughs", hasPublisher: false, hasSubscriber: true, typeName: "DetectionResult" },
    ];
    const reader = new FrameReader();
    const frames = reader.push(buildTable(entries));
    expect(parseTable(frames[0].payload)).toEqual(entries);
  });

  it("data round trip", () => {
    const value = wstring("Hello World");
    const frame = buildData("DataChannel", 7n, 123456n, encode(value));
    const reader = new FrameReader();
    const frames = reader.push(frame);
    const message = parseData(frames[0].payload);
    expect(message.channel).toBe("DataChannel");
    expect(message.sequence).toBe(7n);
    expect(message.timestampMs).toBe(123456n);
    expect(message.value).toEqual(value);
  });

  it("reassembles frames split across chunks", () => {
    const stream = concat([
      buildFrame(FT_PING, new Uint8Array(0)),
      buildHello("x"),
      buildFrame(FT_PONG, new Uint8Array(0)),
    ]);
    const reader = new FrameReader();
    const seen: number[] = [];
    for (const byte of stream) {
      for (const frame of reader.push(Uint8Array.from([byte]))) {
        seen.push(frame.frameType);
      }
    }
    expect(seen).toEqual([FT_PING, FT_HELLO, FT_PONG]);
  });

  it("rejects bad magic", () => {
    const reader = new FrameReader();
    expect(() => reader.push(Uint8Array.from([0x58, 0x58, 0x58, 0x58, 1, 0, 0, 0, 0])))
      .toThrow();
  });
});
