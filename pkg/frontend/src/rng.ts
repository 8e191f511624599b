/**
 * Deterministic PRNG (sfc32) so exports are byte-identical across runs and
 * platforms. Not cryptographic; only stream reproducibility matters here.
 */

export type Rng = () => number;

export function sfc32(a: number, b: number, c: number, d: number): Rng {
  return function () {
    a |= 0; b |= 0; c |= 0; d |= 0;
    const t = (((a + b) | 0) + d) | 0;
    d = (d + 1) | 0;
    a = b ^ (b >>> 9);
    b = (c + (c << 3)) | 0;
    c = (c << 21) | (c >>> 11);
    c = (c + t) | 0;
    return (t >>> 0) / 4294967296;
  };
}

export function rngFromSeed(seed: number, stream = 0): Rng {
  // splitmix-style expansion of a single integer seed into four words
  let s = (seed ^ 0x9e3779b9) >>> 0;
  const next = () => {
    s = (s + 0x9e3779b9) >>> 0;
    let z = s;
    z = Math.imul(z ^ (z >>> 16), 0x21f0aaad) >>> 0;
    z = Math.imul(z ^ (z >>> 15), 0x735a2d97) >>> 0;
    return (z ^ (z >>> 15)) >>> 0;
  };
  const a = next() ^ Math.imul(stream + 1, 0x85ebca6b);
  const rng = sfc32(a >>> 0, next(), next(), next());
  for (let i = 0; i < 12; i++) rng();
  return rng;
}

/** 32-bit FNV-1a hash, used to derive seeds from strings. */
export function hashString(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

export function gaussian(rng: Rng): number {
  // Box-Muller; discard the pair's second value for simplicity
  let u = 0;
  while (u === 0) u = rng();
  const v = rng();
  return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v);
}
