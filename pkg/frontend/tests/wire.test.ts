import { describe, expect, it } from "vitest";

import {
  WireValue,
  decode,
  decodeExact,
  encode,
  wbool,
  wbytes,
  wfloat,
  wint,
  wlist,
  wnull,
  wstring,
  wstruct,
} from "../src/wire.js";

function hex(data: Uint8Array): string {
  return [...data].map((b) => b.toString(16).padStart(2, "0")).join("");
}

describe("pinned byte examples", () => {
  it("bool true", () => {
    expect(hex(encode(wbool(true)))).toBe("0101");
  });

  it("float 1.0", () => {
    expect(hex(encode(wfloat(1.0)))).toBe("033ff0000000000000");
  });

  it('string "hi"', () => {
    expect(hex(encode(wstring("hi")))).toBe("04000000026869");
  });

  it("null and int", () => {
    expect(hex(encode(wnull()))).toBe("00");
    expect(hex(encode(wint(-2n)))).toBe("02fffffffffffffffe");
  });
});

describe("round trips", () => {
  // deterministic linear congruential generator
  let state = 0x2f00dn;
  const next = () => {
    state = (state * 6364136223846793005n + 1442695040888963407n) & 0xffffffffffffffffn;
    return Number(state >> 33n) / 0x80000000;
  };

  function randomValue(depth: number): WireValue {
    const kinds = depth < 3 ? 9 : 6;
    switch (Math.floor(next() * kinds)) {
      case 0: return wnull();
      case 1: return wbool(next() < 0.5);
      case 2: return wint(BigInt(Math.floor(next() * 2 ** 62)) - 2n ** 61n);
      case 3: return wfloat((next() - 0.5) * 1e12);
      case 4: return wstring(Array.from({ length: Math.floor(next() * 10) },
        () => String.fromCharCode(32 + Math.floor(next() * 1000))).join(""));
      case 5: return wbytes(Uint8Array.from({ length: Math.floor(next() * 12) },
        () => Math.floor(next() * 256)));
      case 6: return wlist(Array.from({ length: Math.floor(next() * 5) },
        () => randomValue(depth + 1)));
      case 7: {
        const entries = new Map<string, WireValue>();
        for (let i = 0; i < Math.floor(next() * 5); i++) {
          entries.set(`k${i}_${Math.floor(next() * 99)}`, randomValue(depth + 1));
        }
        return { kind: "map", entries };
      }
      default: {
        const fields: [string, WireValue][] = [];
        for (let i = 0; i < Math.floor(next() * 5); i++) {
          fields.push([`f${i}`, randomValue(depth + 1)]);
        }
        return wstruct(`T${Math.floor(next() * 99)}`, fields);
      }
    }
  }

  it("5000 random values survive encode/decode", () => {
    for (let i = 0; i < 5000; i++) {
      const value = randomValue(0);
      const blob = encode(value);
      const back = decodeExact(blob);
      // canonical re-encode must be byte-identical
      expect(hex(encode(back))).toBe(hex(blob));
    }
  });

  it("struct example", () => {
    const value = wstruct("AudioChunk", [["rate", wint(16000)]]);
    expect(decodeExact(encode(value))).toEqual(value);
  });

  it("prefix freeness", () => {
    const value = wlist([wstring("x"), wint(3n)]);
    const blob = encode(value);
    const extended = new Uint8Array(blob.length + 4);
    extended.set(blob, 0);
    extended.set([0xde, 0xad, 0xbe, 0xef], blob.length);
    const [decoded, offset] = decode(extended);
    expect(decoded).toEqual(value);
    expect(offset).toBe(blob.length);
  });
});

describe("canonical map ordering", () => {
  it("sorts keys by utf-8 bytes", () => {
    const a: WireValue = {
      kind: "map",
      entries: new Map([["b", wint(1n)], ["a", wint(2n)]]),
    };
    const b: WireValue = {
      kind: "map",
      entries: new Map([["a", wint(2n)], ["b", wint(1n)]]),
    };
    expect(hex(encode(a))).toBe(hex(encode(b)));
  });

  it("sorts astral-plane keys like the byte encoding does", () => {
    // U+E000 encodes as ee 80 80; U+10000 as f0 90 80 80 — byte order puts
    // U+E000 first even though UTF-16 code units would say otherwise
    const entries = new Map<string, WireValue>([
      ["\u{10000}", wint(1n)],
      ["", wint(2n)],
    ]);
    const blob = encode({ kind: "map", entries });
    const [back] = decode(blob);
    if (back.kind !== "map") throw new Error("not a map");
    expect([...back.entries.keys()]).toEqual(["", "\u{10000}"]);
  });
});

describe("errors", () => {
  it("unknown tag", () => {
    expect(() => decode(Uint8Array.from([0xff, 0x00]))).toThrow();
  });

  it("truncated string", () => {
    const blob = Uint8Array.from([0x04, 0, 0, 0, 5, 0x68, 0x69]);
    expect(() => decode(blob)).toThrow();
  });
});
