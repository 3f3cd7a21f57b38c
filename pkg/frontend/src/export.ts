/** Folder-to-FEDF export driver. */

import * as fs from 'fs';
import * as path from 'path';
import { Backbone } from './backbones.js';
import { encodeFedf } from './fedf.js';
import {
  CHANNEL_MEAN, CHANNEL_STD, ImageFolder, INPUT_SIZE, loadImageFolder,
} from './images.js';

export interface ExportJob {
  /** Root folder holding one directory per class (or per split). */
  dataset: string;
  /** Optional split subdirectory under the dataset root. */
  split?: string;
  backbone: string;
  out: string;
  batchSize?: number;
  /** Recorded in the sidecar; extraction always runs on the CPU. */
  device?: string;
}

export interface ExportSummary {
  out: string;
  sidecar: string;
  numImages: number;
  numClasses: number;
  dim: number;
}

function sidecarPath(out: string): string {
  const parsed = path.parse(out);
  return path.join(parsed.dir, `${parsed.name}.provenance.txt`);
}

function writeSidecar(file: string, job: ExportJob, folder: ImageFolder,
                      dim: number): void {
  const lines = [
    `backbone: ${job.backbone}`,
    `dim: ${dim}`,
    `dataset: ${job.dataset}`,
    `split: ${job.split ?? '-'}`,
    `device: ${job.device ?? 'cpu'}`,
    `images: ${folder.images.length}`,
    `classes: ${folder.classNames.map((n, i) => `${i}=${n}`).join(' ')}`,
    `preprocess: bilinear resize ${INPUT_SIZE}x${INPUT_SIZE}, ` +
      `scale 1/255, mean [${CHANNEL_MEAN.join(', ')}], ` +
      `std [${CHANNEL_STD.join(', ')}]`,
    'features: pooled-pyramid projection, pre-head, un-normalized',
  ];
  fs.writeFileSync(file, lines.join('\n') + '\n');
}

/**
 * Extract every image under the dataset folder and write one FEDF file plus
 * a plain-text provenance sidecar next to it. Batching only chunks the work;
 * the output bytes do not depend on the batch size.
 */
export function exportFeatures(job: ExportJob): ExportSummary {
  const root = job.split ? path.join(job.dataset, job.split) : job.dataset;
  const folder = loadImageFolder(root);
  const backbone = new Backbone(job.backbone);
  const batch = Math.max(1, job.batchSize ?? 32);

  const n = folder.images.length;
  const features = new Float32Array(n * backbone.dim);
  const labels = new Uint32Array(n);
  for (let start = 0; start < n; start += batch) {
    for (let i = start; i < Math.min(start + batch, n); i++) {
      const vector = backbone.extract(folder.images[i]);
      if (vector.length !== backbone.dim) {
        throw new Error(
          `backbone ${job.backbone} produced ${vector.length} values, ` +
          `header declares ${backbone.dim}`,
        );
      }
      features.set(vector, i * backbone.dim);
      labels[i] = folder.images[i].label;
    }
  }

  fs.mkdirSync(path.dirname(path.resolve(job.out)), { recursive: true });
  fs.writeFileSync(job.out, encodeFedf({
    dim: backbone.dim,
    numClasses: folder.classNames.length,
    labels,
    features,
  }));
  const sidecar = sidecarPath(job.out);
  writeSidecar(sidecar, job, folder, backbone.dim);
  return {
    out: job.out,
    sidecar,
    numImages: n,
    numClasses: folder.classNames.length,
    dim: backbone.dim,
  };
}
