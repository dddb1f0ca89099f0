#!/usr/bin/env node
/**
 * CLI: export chunk encodings from a dataset into an ENC1 file.
 *
 * Flag names follow the Python pipeline's encode/prepare commands where
 * they overlap (--dataset, --strategy, --max-len, --out).
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { bridgeEncode } from "./bridge.js";
import { DEFAULT_MODEL, loadEncoder } from "./encoders.js";
import { STRATEGIES, Strategy } from "./prep.js";

async function main() {
  const argv = await yargs(hideBin(process.argv))
    .option("dataset", { type: "string", demandOption: true, describe: "JSONL dataset path" })
    .option("strategy", {
      type: "string", demandOption: true, choices: STRATEGIES as unknown as string[],
    })
    .option("max-len", { type: "number", default: 512, describe: "chunk length incl. CLS/SEP" })
    .option("top-k", { type: "number", default: 200, describe: "paragraph index size" })
    .option("model", { type: "string", default: DEFAULT_MODEL })
    .option("backend", {
      type: "string", default: "hf", choices: ["hf", "stub"],
      describe: "hf: pretrained model via transformers.js; stub: deterministic offline encoder",
    })
    .option("dim", { type: "number", default: 768, describe: "stub backend width" })
    .option("out", { type: "string", demandOption: true, describe: "output ENC1 path" })
    .strict()
    .parse();

  try {
    const encoder = await loadEncoder(argv.backend, argv.model, argv.dim);
    const count = await bridgeEncode({
      datasetPath: argv.dataset,
      strategy: argv.strategy as Strategy,
      maxLen: argv["max-len"],
      outPath: argv.out,
      paragraphTopK: argv["top-k"],
    }, encoder);
    console.log(`wrote ${argv.out} (${count} encodings, dim ${encoder.dim})`);
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    process.exit(2);
  }
}

main();
