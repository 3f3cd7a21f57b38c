/** Image loading and inference-time preprocessing. */

import * as fs from 'fs';
import * as path from 'path';
import { PNG } from 'pngjs';

export interface RawImage {
  width: number;
  height: number;
  /** RGB interleaved, [0, 1]. */
  pixels: Float32Array;
}

export interface LabeledImage extends RawImage {
  label: number;
  file: string;
}

export interface ImageFolder {
  classNames: string[];
  images: LabeledImage[];
}

// Standard inference-time constants; recorded in the provenance sidecar.
export const INPUT_SIZE = 224;
export const CHANNEL_MEAN = [0.485, 0.456, 0.406];
export const CHANNEL_STD = [0.229, 0.224, 0.225];

export function readPng(file: string): RawImage {
  const png = PNG.sync.read(fs.readFileSync(file));
  const pixels = new Float32Array(png.width * png.height * 3);
  for (let i = 0; i < png.width * png.height; i++) {
    pixels[3 * i] = png.data[4 * i] / 255;
    pixels[3 * i + 1] = png.data[4 * i + 1] / 255;
    pixels[3 * i + 2] = png.data[4 * i + 2] / 255;
  }
  return { width: png.width, height: png.height, pixels };
}

/**
 * One directory per class, classes ordered by name, files ordered by name
 * inside each class. Row order in the export follows this ordering, so a
 * folder always produces the same file.
 */
export function loadImageFolder(dir: string): ImageFolder {
  if (!fs.existsSync(dir) || !fs.statSync(dir).isDirectory()) {
    throw new Error(`image folder not found: ${dir}`);
  }
  const classNames = fs.readdirSync(dir)
    .filter((name) => fs.statSync(path.join(dir, name)).isDirectory())
    .sort();
  if (classNames.length === 0) {
    throw new Error(`no class directories under ${dir}`);
  }
  const images: LabeledImage[] = [];
  classNames.forEach((className, label) => {
    const classDir = path.join(dir, className);
    const files = fs.readdirSync(classDir)
      .filter((name) => name.toLowerCase().endsWith('.png'))
      .sort();
    if (files.length === 0) {
      throw new Error(`class ${className} holds no .png images`);
    }
    for (const file of files) {
      const full = path.join(classDir, file);
      images.push({ ...readPng(full), label, file: full });
    }
  });
  return { classNames, images };
}

function sampleBilinear(
  image: RawImage, x: number, y: number, channel: number,
): number {
  const x0 = Math.min(Math.floor(x), image.width - 1);
  const y0 = Math.min(Math.floor(y), image.height - 1);
  const x1 = Math.min(x0 + 1, image.width - 1);
  const y1 = Math.min(y0 + 1, image.height - 1);
  const fx = x - x0;
  const fy = y - y0;
  const at = (cx: number, cy: number) =>
    image.pixels[3 * (cy * image.width + cx) + channel];
  const top = at(x0, y0) * (1 - fx) + at(x1, y0) * fx;
  const bottom = at(x0, y1) * (1 - fx) + at(x1, y1) * fx;
  return top * (1 - fy) + bottom * fy;
}

/** Bilinear resize to the network input size, then standardize channels. */
export function preprocess(image: RawImage): Float32Array {
  const out = new Float32Array(INPUT_SIZE * INPUT_SIZE * 3);
  const scaleX = image.width / INPUT_SIZE;
  const scaleY = image.height / INPUT_SIZE;
  for (let row = 0; row < INPUT_SIZE; row++) {
    const y = (row + 0.5) * scaleY - 0.5;
    for (let col = 0; col < INPUT_SIZE; col++) {
      const x = (col + 0.5) * scaleX - 0.5;
      for (let channel = 0; channel < 3; channel++) {
        const value = sampleBilinear(
          image, Math.max(x, 0), Math.max(y, 0), channel);
        out[3 * (row * INPUT_SIZE + col) + channel] =
          (value - CHANNEL_MEAN[channel]) / CHANNEL_STD[channel];
      }
    }
  }
  return out;
}
