/**
 * Fixed feature extractors at the standard embedding widths.
 *
 * Each backbone is a frozen random projection over a spatial pooling
 * pyramid: average pools at 1x1, 2x2, 4x4, and 8x8 per channel feed a
 * seeded dense layer with tanh. Weights derive from the backbone name, so
 * the same image always maps to the same vector, with no model files or
 * downloads involved. Features are taken before any normalization, as the
 * downstream initializers expect raw embeddings.
 */

import { INPUT_SIZE, preprocess, RawImage } from './images.js';
import { hashSeed, mulberry32 } from './prng.js';

export const BACKBONE_DIMS: Record<string, number> = {
  squeezenet: 512,
  mobilenetv2: 1280,
  vit: 768,
};

export const POOL_GRIDS = [1, 2, 4, 8];

// 3 channels x (1 + 4 + 16 + 64) cells
export const POOLED_VALUES = 3 * POOL_GRIDS.reduce((a, g) => a + g * g, 0);

/** Average each channel over an n x n partition of the input. */
export function poolPyramid(standardized: Float32Array): Float64Array {
  const out = new Float64Array(POOLED_VALUES);
  let cursor = 0;
  for (const grid of POOL_GRIDS) {
    const cell = INPUT_SIZE / grid;
    for (let channel = 0; channel < 3; channel++) {
      for (let gy = 0; gy < grid; gy++) {
        for (let gx = 0; gx < grid; gx++) {
          let sum = 0;
          for (let y = gy * cell; y < (gy + 1) * cell; y++) {
            for (let x = gx * cell; x < (gx + 1) * cell; x++) {
              sum += standardized[3 * (y * INPUT_SIZE + x) + channel];
            }
          }
          out[cursor++] = sum / (cell * cell);
        }
      }
    }
  }
  return out;
}

export class Backbone {
  readonly name: string;
  readonly dim: number;
  private readonly weights: Float64Array;
  private readonly biases: Float64Array;

  constructor(name: string) {
    const dim = BACKBONE_DIMS[name];
    if (dim === undefined) {
      const known = Object.keys(BACKBONE_DIMS).join(', ');
      throw new Error(`unknown backbone ${name}; expected one of ${known}`);
    }
    this.name = name;
    this.dim = dim;
    const rng = mulberry32(hashSeed(`backbone:${name}`));
    // variance-preserving uniform init
    const scale = Math.sqrt(3 / POOLED_VALUES);
    this.weights = new Float64Array(dim * POOLED_VALUES);
    for (let i = 0; i < this.weights.length; i++) {
      this.weights[i] = (2 * rng() - 1) * scale;
    }
    this.biases = new Float64Array(dim);
    for (let i = 0; i < dim; i++) {
      this.biases[i] = (2 * rng() - 1) * 0.1;
    }
  }

  extract(image: RawImage): Float32Array {
    const pooled = poolPyramid(preprocess(image));
    const out = new Float32Array(this.dim);
    for (let unit = 0; unit < this.dim; unit++) {
      let sum = this.biases[unit];
      const row = unit * POOLED_VALUES;
      for (let i = 0; i < POOLED_VALUES; i++) {
        sum += this.weights[row + i] * pooled[i];
      }
      out[unit] = Math.tanh(sum);
    }
    return out;
  }
}
