#!/usr/bin/env node
/**
 * clip-export --dataset <name> --backbone <name> --out <dir>
 *             [--template STR] [--batch N] [--seed N]
 *
 * Writes prototypes.bin, batch_<t>.bin (+ .labels sidecars) and manifest.txt
 * into the output directory. Exit code 2 on bad arguments, 3 on export
 * failure.
 */

import { parseArgs } from "node:util";

import { loadBackbone } from "./backbone.js";
import { loadDataset } from "./datasets.js";
import { exportStream } from "./export.js";

async function run(): Promise<number> {
  let parsed;
  try {
    parsed = parseArgs({
      options: {
        dataset: { type: "string" },
        backbone: { type: "string" },
        out: { type: "string" },
        template: { type: "string", default: "a photo of a {}." },
        batch: { type: "string", default: "128" },
        seed: { type: "string", default: "0" },
      },
    });
  } catch (err) {
    console.error(`argument error: ${(err as Error).message}`);
    return 2;
  }
  const { dataset, backbone, out, template, batch, seed } = parsed.values;
  if (!dataset || !backbone || !out) {
    console.error("usage: clip-export --dataset <name> --backbone <name> --out <dir> "
      + "[--template STR] [--batch N] [--seed N]");
    return 2;
  }
  const batchSize = Number(batch);
  const seedValue = Number(seed);
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    console.error("argument error: --batch must be a positive integer");
    return 2;
  }
  if (!Number.isInteger(seedValue)) {
    console.error("argument error: --seed must be an integer");
    return 2;
  }

  try {
    const data = loadDataset(dataset, seedValue);
    const model = await loadBackbone(backbone, seedValue);
    const result = exportStream({
      dataset: data,
      backbone: model,
      template: template as string,
      batchSize,
      outDir: out,
      temperature: 0.01,
    });
    console.log(`exported ${result.nSamples} samples / ${result.nBatches} batches `
      + `across ${result.domains.length} domains (K=${result.nClasses}, `
      + `D=${result.dim}) to ${out}`);
    return 0;
  } catch (err) {
    console.error(`export failed: ${(err as Error).message}`);
    return 3;
  }
}

run().then((code) => { process.exitCode = code; });
