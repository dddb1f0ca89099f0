/**
 * Text preprocessing and chunk-index arithmetic.
 *
 * These mirror the Python pipeline exactly: same normalization rules, same
 * slice indices per strategy for the same token counts. Only the tokenizer
 * differs by design — the bridge uses the model's own subword vocabulary,
 * so token counts (and therefore chunk contents) legitimately differ from
 * the toy tokenizer's.
 */

export const STRATEGIES = ["front", "back", "mixed", "all", "paragraph"] as const;
export type Strategy = (typeof STRATEGIES)[number];

export const STRATEGY_CODES: Record<Strategy, number> = {
  front: 0,
  back: 1,
  mixed: 2,
  all: 3,
  paragraph: 4,
};

/**
 * Lower-case, strip decimal digits, collapse whitespace runs (runs that
 * contain a line break become a single newline, others a single space), trim.
 */
export function preprocessText(raw: string): string {
  if (!raw) throw new Error("empty document");
  const text = raw
    .toLowerCase()
    .replace(/\p{Nd}/gu, "")
    .replace(/\s+/g, (m) => (m.includes("\n") ? "\n" : " "))
    .trim();
  if (!text) throw new Error("empty document");
  return text;
}

/** Inclusive-start, exclusive-end index ranges into a token sequence. */
export interface ChunkSpan {
  positionKey: string;
  ranges: Array<[number, number]>; // mixed uses two ranges, others one
}

const HEADER_RE = /^([^:\s]+(?: [^:\s]+){0,5}):/;

/** Colon-terminated 1-6 word headers at line starts, with char spans. */
export function detectParagraphs(text: string): Array<{ name: string; start: number; end: number }> {
  const headers: Array<{ name: string; start: number }> = [];
  let offset = 0;
  for (const line of text.split("\n")) {
    const m = HEADER_RE.exec(line);
    if (m) headers.push({ name: m[1], start: offset });
    offset += line.length + 1;
  }
  return headers.map((h, i) => ({
    name: h.name,
    start: h.start,
    end: i + 1 < headers.length ? headers[i + 1].start - 1 : text.length,
  }));
}

/**
 * Chunk index ranges for one document under one strategy.
 *
 * `length` counts the document's content tokens (no CLS/SEP); `maxLen`
 * includes the CLS and SEP slots, leaving maxLen-2 content positions.
 * The paragraph strategy takes token spans (name, start, end) and keeps
 * the first occurrence of each indexed name, truncated to maxLen-2.
 */
export function chunkSpans(
  length: number,
  strategy: Strategy,
  maxLen: number,
  paragraphTokenSpans?: Array<{ name: string; start: number; end: number }>,
  paragraphNames?: Set<string>,
): ChunkSpan[] {
  if (maxLen < 8) throw new Error(`max_len must be >= 8, got ${maxLen}`);
  const content = maxLen - 2;
  switch (strategy) {
    case "front":
      return [{ positionKey: "0", ranges: [[0, Math.min(length, content)]] }];
    case "back":
      return [{ positionKey: "0", ranges: [[Math.max(0, length - content), length]] }];
    case "mixed": {
      if (length <= content) return [{ positionKey: "0", ranges: [[0, length]] }];
      const frontHalf = content - Math.floor(content / 2);
      return [{
        positionKey: "0",
        ranges: [[0, frontHalf], [length - Math.floor(content / 2), length]],
      }];
    }
    case "all": {
      const spans: ChunkSpan[] = [];
      for (let i = 0, k = 0; i < length; i += content, k += 1) {
        spans.push({ positionKey: String(k), ranges: [[i, Math.min(i + content, length)]] });
      }
      return spans;
    }
    case "paragraph": {
      if (!paragraphTokenSpans || !paragraphNames) {
        throw new Error("paragraph strategy requires paragraph spans and an index");
      }
      const seen = new Set<string>();
      const spans: ChunkSpan[] = [];
      for (const { name, start, end } of paragraphTokenSpans) {
        if (!paragraphNames.has(name) || seen.has(name)) continue;
        seen.add(name);
        spans.push({ positionKey: name, ranges: [[start, Math.min(end, start + content)]] });
      }
      return spans;
    }
  }
}

/** Materialize a chunk's token ids from its ranges. */
export function sliceTokens(tokenIds: number[], span: ChunkSpan): number[] {
  return span.ranges.flatMap(([a, b]) => tokenIds.slice(a, b));
}
