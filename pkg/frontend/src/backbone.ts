/**
 * Embedding backbones. The "toy" backbone is fully deterministic and
 * self-contained: a fixed seeded linear projection of pixels with a tanh
 * squash, so exports reproduce byte-for-byte and need no model weights.
 * Real CLIP backbones are loaded on demand and raise a clear error when the
 * runtime dependency is missing.
 */

import { GrayImage } from "./datasets.js";
import { gaussian, hashString, rngFromSeed } from "./rng.js";

export interface Backbone {
  readonly name: string;
  readonly dim: number;
  embedImage(image: GrayImage): Float32Array;
  embedText(prompt: string): Float32Array;
}

export class ToyBackbone implements Backbone {
  readonly name = "toy";
  readonly dim: number;
  private readonly projection: Float64Array; // dim x (side*side)
  private readonly side: number;

  constructor(dim = 16, side = 16, seed = 1234) {
    this.dim = dim;
    this.side = side;
    const rng = rngFromSeed(seed, 7);
    this.projection = new Float64Array(dim * side * side);
    for (let i = 0; i < this.projection.length; i++) {
      this.projection[i] = gaussian(rng) / Math.sqrt(side);
    }
  }

  embedImage(image: GrayImage): Float32Array {
    if (image.side !== this.side) {
      throw new Error(`backbone expects ${this.side}x${this.side} images`);
    }
    const px = image.pixels;
    const out = new Float32Array(this.dim);
    for (let j = 0; j < this.dim; j++) {
      let acc = 0;
      const row = j * px.length;
      for (let i = 0; i < px.length; i++) acc += this.projection[row + i] * px[i];
      out[j] = Math.fround(Math.tanh(acc));
    }
    return out;
  }

  embedText(prompt: string): Float32Array {
    // deterministic pseudo-embedding of the prompt string
    const rng = rngFromSeed(hashString(prompt), 11);
    const out = new Float32Array(this.dim);
    let norm = 0;
    for (let j = 0; j < this.dim; j++) {
      out[j] = gaussian(rng);
      norm += out[j] * out[j];
    }
    norm = Math.sqrt(norm);
    for (let j = 0; j < this.dim; j++) out[j] = Math.fround(out[j] / norm);
    return out;
  }
}

const REAL_BACKBONE_DIMS: Record<string, number> = {
  "vit-b-16": 512,
  "resnet-50": 1024,
};

export async function loadBackbone(name: string, seed: number): Promise<Backbone> {
  if (name === "toy") return new ToyBackbone(16, 16, seed);
  if (name in REAL_BACKBONE_DIMS) {
    try {
      // @ts-ignore optional runtime dependency, resolved only when installed
      await import("@huggingface/transformers");
    } catch {
      throw new Error(
        `backbone unavailable: '${name}' needs the optional dependency ` +
        `@huggingface/transformers (npm install @huggingface/transformers)`);
    }
    throw new Error(`backbone unavailable: '${name}' loader not wired for this build`);
  }
  throw new Error(`backbone unavailable: unknown backbone '${name}'`);
}
