import { describe, expect, it } from "vitest";

import { chunkSpans, detectParagraphs, preprocessText, sliceTokens } from "../src/prep.js";

const range = (n: number) => Array.from({ length: n }, (_, i) => i + 4);

describe("preprocessText", () => {
  it("lower-cases and strips digits", () => {
    expect(preprocessText("Patient is 45 y/o Male.")).toBe("patient is y/o male.");
    expect(preprocessText("ABC")).toBe("abc");
  });

  it("collapses whitespace, keeping line breaks", () => {
    expect(preprocessText("a  1  b\n2c")).toBe("a b\nc");
    expect(preprocessText("x \n\n y")).toBe("x\ny");
  });

  it("is idempotent and rejects empty input", () => {
    const once = preprocessText("Some  TEXT 123\nwith lines");
    expect(preprocessText(once)).toBe(once);
    expect(() => preprocessText("")).toThrow("empty document");
    expect(() => preprocessText("42 7")).toThrow("empty document");
  });
});

describe("chunkSpans", () => {
  // frozen values matching the Python textprep tests for identical token counts
  it("all: consecutive chunks, last shorter (1200 @ 512)", () => {
    const spans = chunkSpans(1200, "all", 512);
    expect(spans.map((s) => s.ranges[0])).toEqual([[0, 510], [510, 1020], [1020, 1200]]);
    expect(spans.map((s) => s.positionKey)).toEqual(["0", "1", "2"]);
  });

  it("all: reconstruction covers every token exactly once", () => {
    for (const [n, maxLen] of [[1, 8], [77, 16], [512, 512], [4999, 128]] as const) {
      const spans = chunkSpans(n, "all", maxLen);
      const ids = range(n);
      const rebuilt = spans.flatMap((s) => sliceTokens(ids, s));
      expect(rebuilt).toEqual(ids);
    }
  });

  it("mixed on a long document takes 255 + 255 (1200 @ 512)", () => {
    const spans = chunkSpans(1200, "mixed", 512);
    expect(spans[0].ranges).toEqual([[0, 255], [945, 1200]]);
  });

  it("front/back/mixed agree on short documents (300 @ 512)", () => {
    const ids = range(300);
    for (const strategy of ["front", "back", "mixed"] as const) {
      expect(sliceTokens(ids, chunkSpans(300, strategy, 512)[0])).toEqual(ids);
    }
  });

  it("front is a prefix, back a suffix", () => {
    const ids = range(1000);
    expect(sliceTokens(ids, chunkSpans(1000, "front", 512)[0])).toEqual(ids.slice(0, 510));
    expect(sliceTokens(ids, chunkSpans(1000, "back", 512)[0])).toEqual(ids.slice(490));
  });

  it("paragraph: first occurrence per indexed name, truncated", () => {
    const spans = chunkSpans(100, "paragraph", 10,
      [
        { name: "meds", start: 0, end: 40 },
        { name: "exam", start: 40, end: 70 },
        { name: "meds", start: 70, end: 100 },
      ],
      new Set(["meds"]));
    expect(spans).toEqual([{ positionKey: "meds", ranges: [[0, 8]] }]);
  });

  it("rejects tiny max_len", () => {
    expect(() => chunkSpans(10, "front", 4)).toThrow("max_len");
  });
});

describe("detectParagraphs", () => {
  it("finds colon headers at line starts", () => {
    const text = "chief complaint: chest pain\nhistory: long text";
    const spans = detectParagraphs(text);
    expect(spans.map((s) => s.name)).toEqual(["chief complaint", "history"]);
    expect(text.slice(spans[0].start, spans[0].end)).toBe("chief complaint: chest pain");
    expect(text.slice(spans[1].start, spans[1].end)).toBe("history: long text");
  });

  it("ignores headers longer than six words and header-free text", () => {
    expect(detectParagraphs("one two three four five six seven: x")).toEqual([]);
    expect(detectParagraphs("no headers at all")).toEqual([]);
  });
});
