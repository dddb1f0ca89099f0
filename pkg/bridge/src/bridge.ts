/**
 * Bridge pipeline: dataset JSONL in, ENC1 out.
 *
 * Applies the same normalization and chunk-index arithmetic as the Python
 * side, but tokenizes with the encoder's own vocabulary (real subword
 * counts differ from the toy tokenizer's, which is expected), pools the
 * CLS position, and writes ENC1 byte-conformant files.
 */

import { readFileSync } from "node:fs";

import { Enc1Entry, writeEnc1 } from "./enc1.js";
import { ChunkEncoder } from "./encoders.js";
import {
  Strategy,
  chunkSpans,
  detectParagraphs,
  preprocessText,
  sliceTokens,
} from "./prep.js";

export interface BridgeConfig {
  datasetPath: string;
  strategy: Strategy;
  maxLen: number;          // includes the CLS/SEP slots
  outPath: string;
  paragraphTopK?: number;  // paragraph strategy only
}

export interface DatasetDoc {
  id: string;
  text: string;
  labels: string[];
  split: string;
}

export function readDataset(path: string): DatasetDoc[] {
  const docs: DatasetDoc[] = [];
  const lines = readFileSync(path, "utf-8").split("\n");
  lines.forEach((line, i) => {
    if (!line.trim()) return;
    let obj: any;
    try {
      obj = JSON.parse(line);
    } catch (err) {
      throw new Error(`${path}:${i + 1}: invalid JSON: ${err}`);
    }
    for (const key of ["id", "text", "labels", "split"]) {
      if (!(key in obj)) throw new Error(`${path}:${i + 1}: missing field ${key}`);
    }
    docs.push(obj as DatasetDoc);
  });
  if (docs.length === 0) throw new Error(`${path}: no documents`);
  return docs;
}

/** Top-K paragraph names by training-document frequency (ties: name order). */
export function buildParagraphIndex(docs: DatasetDoc[], topK: number): Set<string> {
  const freq = new Map<string, number>();
  for (const doc of docs) {
    if (doc.split !== "train") continue;
    const names = new Set(detectParagraphs(preprocessText(doc.text)).map((p) => p.name));
    for (const name of names) freq.set(name, (freq.get(name) ?? 0) + 1);
  }
  const ranked = [...freq.entries()].sort((a, b) => b[1] - a[1] || (a[0] < b[0] ? -1 : 1));
  return new Set(ranked.slice(0, topK).map(([name]) => name));
}

export async function bridgeEncode(cfg: BridgeConfig, encoder: ChunkEncoder): Promise<number> {
  const docs = readDataset(cfg.datasetPath);
  const paragraphNames = cfg.strategy === "paragraph"
    ? buildParagraphIndex(docs, cfg.paragraphTopK ?? 200)
    : undefined;

  const entries: Enc1Entry[] = [];
  for (const doc of docs) {
    const text = preprocessText(doc.text);
    const tokenIds = await encoder.tokenize(text);

    let paragraphTokenSpans;
    if (cfg.strategy === "paragraph") {
      // per-segment tokenization accumulates token offsets; paragraph
      // boundaries fall on word boundaries so the counts add up
      paragraphTokenSpans = [];
      let cursor = 0;
      let tokOffset = 0;
      for (const { name, start, end } of detectParagraphs(text)) {
        if (start > cursor) tokOffset += (await encoder.tokenize(text.slice(cursor, start))).length;
        const n = (await encoder.tokenize(text.slice(start, end))).length;
        paragraphTokenSpans.push({ name, start: tokOffset, end: tokOffset + n });
        tokOffset += n;
        cursor = end;
      }
    }

    const spans = chunkSpans(tokenIds.length, cfg.strategy, cfg.maxLen,
                             paragraphTokenSpans, paragraphNames);
    const chunks = spans.map((span) => sliceTokens(tokenIds, span));
    const vectors = await encoder.encodeChunks(chunks);
    spans.forEach((span, i) => {
      entries.push({
        docId: doc.id,
        strategy: cfg.strategy,
        positionKey: span.positionKey,
        vector: vectors[i],
      });
    });
  }
  writeEnc1(cfg.outPath, encoder.dim, entries);
  return entries.length;
}
