/**
 * Binary writers for the gda-stream on-disk format.
 *
 * prototypes.bin   magic "GDAP", u32 K, u32 D, K*D little-endian f32
 * batch_<t>.bin    magic "GDAB", u32 t, u32 domain_id, u32 N, u32 D, N*D f32
 * batch_<t>.labels N little-endian u32
 * manifest.txt     version/dim/classes lines, one domain line per domain in
 *                  stream order, then temperature and class-name lines
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

export interface BatchRecord {
  stepIndex: number;
  domainId: number;
  features: Float32Array; // row-major N x D
  n: number;
  dim: number;
  labels?: Uint32Array;
}

export interface DomainEntry {
  domainId: number;
  batches: number;
  samples: number;
}

export function encodePrototypes(matrix: Float32Array, k: number, d: number): Buffer {
  if (matrix.length !== k * d) throw new Error("prototype matrix size mismatch");
  const buf = Buffer.alloc(12 + 4 * k * d);
  buf.write("GDAP", 0, "ascii");
  buf.writeUInt32LE(k, 4);
  buf.writeUInt32LE(d, 8);
  for (let i = 0; i < matrix.length; i++) buf.writeFloatLE(matrix[i], 12 + 4 * i);
  return buf;
}

export function encodeBatch(batch: BatchRecord): Buffer {
  const { stepIndex, domainId, features, n, dim } = batch;
  if (features.length !== n * dim) throw new Error("feature matrix size mismatch");
  for (const v of features) {
    if (!Number.isFinite(v)) throw new Error("non-finite feature");
  }
  const buf = Buffer.alloc(20 + 4 * n * dim);
  buf.write("GDAB", 0, "ascii");
  buf.writeUInt32LE(stepIndex, 4);
  buf.writeUInt32LE(domainId, 8);
  buf.writeUInt32LE(n, 12);
  buf.writeUInt32LE(dim, 16);
  for (let i = 0; i < features.length; i++) buf.writeFloatLE(features[i], 20 + 4 * i);
  return buf;
}

export function encodeLabels(labels: Uint32Array): Buffer {
  const buf = Buffer.alloc(4 * labels.length);
  for (let i = 0; i < labels.length; i++) buf.writeUInt32LE(labels[i], 4 * i);
  return buf;
}

export function manifestText(dim: number, classNames: string[],
                             domains: DomainEntry[], temperature: number): string {
  const lines = [`version=1`, `dim=${dim}`, `classes=${classNames.length}`];
  for (const d of domains) {
    lines.push(`domain ${d.domainId} batches=${d.batches} samples=${d.samples}`);
  }
  lines.push(`temperature=${temperature}`);
  classNames.forEach((name, i) => lines.push(`class ${i} ${name}`));
  return lines.join("\n") + "\n";
}

export function writeStreamDir(outDir: string, prototypes: Float32Array,
                               k: number, dim: number, classNames: string[],
                               batches: BatchRecord[], temperature: number): DomainEntry[] {
  if (batches.length === 0) throw new Error("empty stream");
  mkdirSync(outDir, { recursive: true });
  const domains: DomainEntry[] = [];
  let prevStep = -1;
  for (const b of batches) {
    if (b.stepIndex <= prevStep) throw new Error("non-monotonic step_index");
    prevStep = b.stepIndex;
    const last = domains[domains.length - 1];
    if (last !== undefined && last.domainId === b.domainId) {
      last.batches += 1;
      last.samples += b.n;
    } else {
      if (domains.some((d) => d.domainId === b.domainId)) {
        throw new Error("domain appears in non-contiguous segments");
      }
      domains.push({ domainId: b.domainId, batches: 1, samples: b.n });
    }
  }
  writeFileSync(join(outDir, "prototypes.bin"), encodePrototypes(prototypes, k, dim));
  for (const b of batches) {
    writeFileSync(join(outDir, `batch_${b.stepIndex}.bin`), encodeBatch(b));
    if (b.labels !== undefined) {
      writeFileSync(join(outDir, `batch_${b.stepIndex}.labels`), encodeLabels(b.labels));
    }
  }
  writeFileSync(join(outDir, "manifest.txt"),
                manifestText(dim, classNames, domains, temperature));
  return domains;
}
