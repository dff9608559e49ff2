/**
 * Synthetic glyph classification data: ten digit-like 3x5 bitmap glyphs,
 * upscaled, randomly placed on the canvas, amplitude-jittered, and buried
 * in Gaussian noise.  Deterministic for a given seed, so fixture exports
 * are reproducible.
 */

const FONT: Record<number, string[]> = {
  0: ['111', '101', '101', '101', '111'],
  1: ['010', '110', '010', '010', '111'],
  2: ['111', '001', '111', '100', '111'],
  3: ['111', '001', '111', '001', '111'],
  4: ['101', '101', '111', '001', '001'],
  5: ['111', '100', '111', '001', '111'],
  6: ['111', '100', '111', '101', '111'],
  7: ['111', '001', '010', '010', '010'],
  8: ['111', '101', '111', '101', '111'],
  9: ['111', '101', '111', '001', '111'],
};

export class Rng {
  private state: number;
  private spare: number | null = null;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  /** mulberry32 */
  next(): number {
    this.state = (this.state + 0x6d2b79f5) >>> 0;
    let t = this.state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  int(maxExclusive: number): number {
    return Math.floor(this.next() * maxExclusive);
  }

  uniform(lo: number, hi: number): number {
    return lo + (hi - lo) * this.next();
  }

  /** Box-Muller */
  normal(mean = 0, std = 1): number {
    if (this.spare !== null) {
      const v = this.spare;
      this.spare = null;
      return mean + std * v;
    }
    let u = 0;
    let v = 0;
    do {
      u = this.next();
    } while (u === 0);
    v = this.next();
    const r = Math.sqrt(-2 * Math.log(u));
    this.spare = r * Math.sin(2 * Math.PI * v);
    return mean + std * r * Math.cos(2 * Math.PI * v);
  }
}

export function glyph(digit: number, scale: number): Float32Array {
  const rows = FONT[digit];
  if (!rows) throw new Error(`no glyph for digit ${digit}`);
  const gh = 5 * scale;
  const gw = 3 * scale;
  const out = new Float32Array(gh * gw);
  for (let y = 0; y < gh; y++) {
    for (let x = 0; x < gw; x++) {
      out[y * gw + x] = rows[Math.floor(y / scale)][Math.floor(x / scale)] === '1' ? 1 : 0;
    }
  }
  return out;
}

export interface Dataset {
  /** NHWC, channel count 1: [count, side, side, 1] flattened */
  images: Float32Array;
  labels: Int32Array;
  count: number;
  side: number;
}

export interface DatasetOptions {
  count: number;
  side: number;
  scale: number;
  sigma: number;
  seed: number;
}

export function makeDataset(opts: DatasetOptions): Dataset {
  const { count, side, scale, sigma, seed } = opts;
  const gh = 5 * scale;
  const gw = 3 * scale;
  if (gh > side || gw > side) {
    throw new Error(`glyph ${gw}x${gh} does not fit canvas ${side}x${side}`);
  }
  const rng = new Rng(seed);
  const images = new Float32Array(count * side * side);
  const labels = new Int32Array(count);
  for (let i = 0; i < count; i++) {
    const digit = rng.int(10);
    labels[i] = digit;
    const g = glyph(digit, scale);
    const oy = rng.int(side - gh + 1);
    const ox = rng.int(side - gw + 1);
    const amp = rng.uniform(0.7, 1.0);
    const base = i * side * side;
    for (let y = 0; y < gh; y++) {
      for (let x = 0; x < gw; x++) {
        images[base + (oy + y) * side + (ox + x)] = g[y * gw + x] * amp;
      }
    }
    for (let p = 0; p < side * side; p++) {
      const v = images[base + p] + rng.normal(0, sigma);
      images[base + p] = Math.min(1, Math.max(0, v));
    }
  }
  return { images, labels, count, side };
}
