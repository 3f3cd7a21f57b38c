#!/usr/bin/env node
import * as path from 'node:path';
import { fileURLToPath } from 'node:url';
import { parseArgs } from 'node:util';
import { BACKBONE_DIMS } from './backbones.js';
import { exportFeatures } from './export.js';

const USAGE = `usage: fedf-export --dataset DIR --backbone NAME --out FILE
                   [--split NAME] [--batch-size N] [--device NAME]

Extract features from an image-folder dataset into a FEDF file.
Backbones: ${Object.keys(BACKBONE_DIMS).join(', ')}`;

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        dataset: { type: 'string' },
        split: { type: 'string' },
        backbone: { type: 'string' },
        out: { type: 'string' },
        'batch-size': { type: 'string' },
        device: { type: 'string' },
        help: { type: 'boolean', short: 'h' },
      },
    });
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
  if (parsed.values.help) {
    console.log(USAGE);
    return 0;
  }
  const { dataset, backbone, out } = parsed.values;
  if (!dataset || !backbone || !out) {
    console.error('error: --dataset, --backbone and --out are required');
    console.error(USAGE);
    return 2;
  }
  let batchSize: number | undefined;
  if (parsed.values['batch-size'] !== undefined) {
    batchSize = Number(parsed.values['batch-size']);
    if (!Number.isInteger(batchSize) || batchSize < 1) {
      console.error('error: --batch-size must be a positive integer');
      return 2;
    }
  }
  try {
    const summary = exportFeatures({
      dataset,
      split: parsed.values.split,
      backbone,
      out,
      batchSize,
      device: parsed.values.device,
    });
    console.log(
      `wrote ${summary.numImages} vectors (dim ${summary.dim}, ` +
      `${summary.numClasses} classes) to ${summary.out}`,
    );
    console.log(`sidecar: ${summary.sidecar}`);
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

const invoked = process.argv[1] && path.resolve(process.argv[1]);
if (invoked && fileURLToPath(import.meta.url) === invoked) {
  process.exit(main(process.argv.slice(2)));
}
