/**
 * Procedural labeled image sets. "toy" is a minimal two-class set (stripe
 * orientation); "toy-rotations" applies increasing rotations to the same
 * patterns, one domain per angle in ascending order, mimicking a gradually
 * drifting deployment.
 */

import { Rng, rngFromSeed } from "./rng.js";

export interface GrayImage {
  side: number;
  pixels: Float64Array; // row-major, values roughly in [-1, 1]
}

export interface Sample {
  image: GrayImage;
  label: number;
  domainId: number;
}

export interface Dataset {
  name: string;
  classNames: string[];
  samples: Sample[]; // grouped by domain, ascending domain order
  domainRule: string;
}

const SIDE = 16;

function stripeImage(label: number, phase: number, noise: number, rng: Rng): GrayImage {
  const pixels = new Float64Array(SIDE * SIDE);
  for (let y = 0; y < SIDE; y++) {
    for (let x = 0; x < SIDE; x++) {
      const coord = label === 0 ? y : x;
      const value = Math.sin((coord + phase) * (2 * Math.PI / 5.3));
      pixels[y * SIDE + x] = value + noise * (rng() * 2 - 1);
    }
  }
  return { side: SIDE, pixels };
}

function rotateImage(image: GrayImage, degrees: number): GrayImage {
  const side = image.side;
  const out = new Float64Array(side * side);
  const theta = (degrees * Math.PI) / 180;
  const c = Math.cos(theta);
  const s = Math.sin(theta);
  const center = (side - 1) / 2;
  for (let y = 0; y < side; y++) {
    for (let x = 0; x < side; x++) {
      // inverse-map the output pixel into the source image
      const dx = x - center;
      const dy = y - center;
      const sx = Math.round(center + c * dx + s * dy);
      const sy = Math.round(center - s * dx + c * dy);
      out[y * side + x] = (sx >= 0 && sx < side && sy >= 0 && sy < side)
        ? image.pixels[sy * side + sx]
        : 0;
    }
  }
  return { side, pixels: out };
}

export function canonicalImage(label: number): GrayImage {
  return stripeImage(label, 0, 0, rngFromSeed(0));
}

export function makeToyDataset(seed: number, perClass = 5): Dataset {
  const rng = rngFromSeed(seed, 1);
  const samples: Sample[] = [];
  for (let i = 0; i < perClass; i++) {
    for (let label = 0; label < 2; label++) {
      samples.push({ image: stripeImage(label, rng() * 5, 0.15, rng), label, domainId: 0 });
    }
  }
  return {
    name: "toy",
    classNames: ["horizontal stripes", "vertical stripes"],
    samples,
    domainRule: "single domain",
  };
}

export function makeRotationDataset(seed: number, perDomain = 8,
                                    stepDegrees = 10, domains = 9): Dataset {
  const rng = rngFromSeed(seed, 2);
  const samples: Sample[] = [];
  for (let j = 0; j < domains; j++) {
    const angle = j * stepDegrees;
    for (let i = 0; i < perDomain; i++) {
      const label = i % 2;
      const base = stripeImage(label, rng() * 5, 0.15, rng);
      samples.push({ image: rotateImage(base, angle), label, domainId: j });
    }
  }
  return {
    name: "toy-rotations",
    classNames: ["horizontal stripes", "vertical stripes"],
    samples,
    domainRule: `rotation angle ascending, ${stepDegrees} degree steps`,
  };
}

export function loadDataset(name: string, seed: number): Dataset {
  if (name === "toy") return makeToyDataset(seed);
  if (name === "toy-rotations") return makeRotationDataset(seed);
  throw new Error(`dataset missing: unknown dataset '${name}'`);
}
