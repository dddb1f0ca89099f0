import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { Enc1Entry, readEnc1, writeEnc1 } from "../src/enc1.js";

function sampleEntries(dim: number, n: number): Enc1Entry[] {
  return Array.from({ length: n }, (_, i) => ({
    docId: `doc${i}`,
    strategy: "front" as const,
    positionKey: "0",
    vector: Float32Array.from({ length: dim }, (_, j) => Math.fround(Math.sin(i + j * 0.1))),
  }));
}

describe("ENC1 writer", () => {
  it("round-trips exactly", () => {
    const dir = mkdtempSync(join(tmpdir(), "enc1-"));
    const path = join(dir, "v.enc1");
    const entries = sampleEntries(6, 4);
    writeEnc1(path, 6, entries);
    const back = readEnc1(path);
    expect(back.dim).toBe(6);
    expect(back.entries).toHaveLength(4);
    back.entries.forEach((entry, i) => {
      expect(entry.docId).toBe(entries[i].docId);
      expect(entry.strategy).toBe("front");
      expect(entry.positionKey).toBe("0");
      expect(Array.from(entry.vector)).toEqual(Array.from(entries[i].vector));
    });
  });

  it("writes the documented byte layout", () => {
    const dir = mkdtempSync(join(tmpdir(), "enc1-"));
    const path = join(dir, "layout.enc1");
    writeEnc1(path, 3, sampleEntries(3, 2));
    const blob = readFileSync(path);
    expect(blob.subarray(0, 4).toString("ascii")).toBe("ENC1");
    expect(blob.readUInt32LE(4)).toBe(1);       // version
    expect(blob.readUInt32LE(8)).toBe(3);       // dim
    expect(Number(blob.readBigUInt64LE(12))).toBe(2);
    // per entry: 2 + len("docN") + 1 + 2 + len("0") + 3*4 bytes
    expect(blob.length).toBe(20 + 2 * (2 + 4 + 1 + 2 + 1 + 12));
    expect(blob.readUInt16LE(20)).toBe(4);      // first doc id length
    expect(blob.subarray(22, 26).toString()).toBe("doc0");
  });

  it("rejects empty sets, dim mismatches and duplicate keys", () => {
    const dir = mkdtempSync(join(tmpdir(), "enc1-"));
    expect(() => writeEnc1(join(dir, "e.enc1"), 3, [])).toThrow("empty");
    const bad = sampleEntries(3, 1);
    bad[0].vector = new Float32Array(5);
    expect(() => writeEnc1(join(dir, "d.enc1"), 3, bad)).toThrow("dim");
    const dup = [...sampleEntries(3, 1), ...sampleEntries(3, 1)];
    expect(() => writeEnc1(join(dir, "dup.enc1"), 3, dup)).toThrow("duplicate");
  });
});
