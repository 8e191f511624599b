/**
 * Export orchestration: prototypes from prompt-augmented class names,
 * embedding batches ordered by the dataset's domain rule, labels to
 * sidecars, everything in the engine's exact binary format.
 *
 * Embeddings are written raw (no normalization); prototype rows are
 * L2-normalized. Batches never span two domains.
 */

import { Backbone } from "./backbone.js";
import { Dataset } from "./datasets.js";
import { BatchRecord, DomainEntry, writeStreamDir } from "./format.js";

export interface ExportConfig {
  dataset: Dataset;
  backbone: Backbone;
  template: string;   // e.g. "a photo of a {}."
  batchSize: number;
  outDir: string;
  temperature: number;
}

export function buildPrototypes(backbone: Backbone, classNames: string[],
                                template: string): Float32Array {
  if (classNames.length === 0) throw new Error("class list empty");
  const dim = backbone.dim;
  const matrix = new Float32Array(classNames.length * dim);
  classNames.forEach((name, k) => {
    const prompt = template.includes("{}") ? template.replace("{}", name)
      : `${template} ${name}`;
    const vec = backbone.embedText(prompt);
    let norm = 0;
    for (let j = 0; j < dim; j++) norm += vec[j] * vec[j];
    norm = Math.sqrt(norm);
    if (norm === 0) throw new Error(`zero-norm prototype for class '${name}'`);
    for (let j = 0; j < dim; j++) matrix[k * dim + j] = Math.fround(vec[j] / norm);
  });
  return matrix;
}

export function buildBatches(config: ExportConfig): BatchRecord[] {
  const { dataset, backbone, batchSize } = config;
  const batches: BatchRecord[] = [];
  let step = 0;
  let cursor = 0;
  const samples = dataset.samples;
  while (cursor < samples.length) {
    const domainId = samples[cursor].domainId;
    const group: typeof samples = [];
    while (cursor < samples.length && samples[cursor].domainId === domainId
           && group.length < batchSize) {
      group.push(samples[cursor]);
      cursor += 1;
    }
    const features = new Float32Array(group.length * backbone.dim);
    const labels = new Uint32Array(group.length);
    group.forEach((sample, i) => {
      features.set(backbone.embedImage(sample.image), i * backbone.dim);
      labels[i] = sample.label;
    });
    batches.push({ stepIndex: step, domainId, features, n: group.length,
                   dim: backbone.dim, labels });
    step += 1;
  }
  return batches;
}

export interface ExportResult {
  domains: DomainEntry[];
  nBatches: number;
  nSamples: number;
  dim: number;
  nClasses: number;
}

export function exportStream(config: ExportConfig): ExportResult {
  const prototypes = buildPrototypes(config.backbone, config.dataset.classNames,
                                     config.template);
  const batches = buildBatches(config);
  const domains = writeStreamDir(config.outDir, prototypes,
                                 config.dataset.classNames.length,
                                 config.backbone.dim, config.dataset.classNames,
                                 batches, config.temperature);
  return {
    domains,
    nBatches: batches.length,
    nSamples: batches.reduce((acc, b) => acc + b.n, 0),
    dim: config.backbone.dim,
    nClasses: config.dataset.classNames.length,
  };
}
