/**
 * Chunk encoders behind one interface: a real pretrained transformer via
 * transformers.js (CLS pooling), and a deterministic offline stub for
 * format-conformance testing when no model can be downloaded.
 */

import { createHash } from "node:crypto";

export interface ChunkEncoder {
  readonly dim: number;
  /** Token ids for one preprocessed text, without special tokens. */
  tokenize(text: string): Promise<number[]>;
  /** One vector per chunk; each chunk is a content-token id list. */
  encodeChunks(chunks: number[][]) : Promise<Float32Array[]>;
}

export const DEFAULT_MODEL = "NeuML/pubmedbert-base-embeddings";

/** Pretrained-model encoder; errors cleanly when the model is unreachable. */
export class PretrainedEncoder implements ChunkEncoder {
  readonly dim: number;
  private constructor(
    private tokenizer: any,
    private model: any,
    dim: number,
    private clsId: number,
    private sepId: number,
  ) {
    this.dim = dim;
  }

  static async load(modelId: string = DEFAULT_MODEL): Promise<PretrainedEncoder> {
    let transformers: any;
    try {
      transformers = await import("@huggingface/transformers");
    } catch (err) {
      throw new Error(`transformers.js is not installed: ${err}`);
    }
    let tokenizer: any, model: any;
    try {
      tokenizer = await transformers.AutoTokenizer.from_pretrained(modelId);
      model = await transformers.AutoModel.from_pretrained(modelId);
    } catch (err) {
      throw new Error(`model ${modelId} unavailable (offline?): ${err}`);
    }
    const dim = model.config.hidden_size;
    return new PretrainedEncoder(
      tokenizer, model, dim,
      tokenizer.cls_token_id ?? 101, tokenizer.sep_token_id ?? 102,
    );
  }

  async tokenize(text: string): Promise<number[]> {
    const out = this.tokenizer(text, { add_special_tokens: false });
    return Array.from(out.input_ids.data as BigInt64Array, Number);
  }

  async encodeChunks(chunks: number[][]): Promise<Float32Array[]> {
    const vectors: Float32Array[] = [];
    for (const chunk of chunks) {
      const ids = [this.clsId, ...chunk, this.sepId];
      const { Tensor } = await import("@huggingface/transformers");
      const inputIds = new Tensor("int64", BigInt64Array.from(ids.map(BigInt)), [1, ids.length]);
      const attention = new Tensor("int64", BigInt64Array.from(ids.map(() => 1n)), [1, ids.length]);
      const output = await this.model({ input_ids: inputIds, attention_mask: attention });
      const hidden = output.last_hidden_state;
      // CLS pooling: hidden state at position 0
      vectors.push(Float32Array.from(hidden.data.slice(0, this.dim)));
    }
    return vectors;
  }
}

/**
 * Offline encoder: whitespace tokens hashed to stable ids; a chunk's vector
 * is a deterministic hash expansion of its token ids. Same input, same
 * bytes, any machine. Declares the full-scale width (768) by default.
 */
export class StubEncoder implements ChunkEncoder {
  readonly dim: number;
  private words = new Map<string, number>();

  constructor(dim = 768) {
    this.dim = dim;
  }

  async tokenize(text: string): Promise<number[]> {
    return text.split(/\s+/).filter(Boolean).map((w) => {
      let id = this.words.get(w);
      if (id === undefined) {
        id = parseInt(createHash("sha256").update(w).digest("hex").slice(0, 8), 16);
        this.words.set(w, id);
      }
      return id;
    });
  }

  async encodeChunks(chunks: number[][]): Promise<Float32Array[]> {
    return chunks.map((chunk) => {
      const vector = new Float32Array(this.dim);
      // bag of hashed token features, so content drives the vector
      for (const id of chunk) {
        const h = createHash("sha256").update(`tok:${id}`).digest();
        for (let j = 0; j < 16; j++) {
          const slot = h.readUInt16LE(2 * j) % this.dim;
          vector[slot] += (h[16 + (j % 16)] - 127.5) / 127.5;
        }
      }
      const norm = Math.hypot(...vector) || 1;
      for (let j = 0; j < this.dim; j++) vector[j] /= norm;
      return vector;
    });
  }
}

export async function loadEncoder(backend: string, modelId?: string, dim = 768): Promise<ChunkEncoder> {
  if (backend === "stub") return new StubEncoder(dim);
  if (backend === "hf") return PretrainedEncoder.load(modelId);
  throw new Error(`unknown backend ${backend}; expected "hf" or "stub"`);
}
