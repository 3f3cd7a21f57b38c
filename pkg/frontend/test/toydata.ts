/** Tiny synthetic PNG datasets for the tests. */

import * as fs from 'fs';
import * as path from 'path';
import { PNG } from 'pngjs';

export function writePng(
  file: string, width: number, height: number,
  fill: (x: number, y: number) => [number, number, number],
): void {
  const png = new PNG({ width, height });
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const at = (y * width + x) * 4;
      const [r, g, b] = fill(x, y);
      png.data[at] = r;
      png.data[at + 1] = g;
      png.data[at + 2] = b;
      png.data[at + 3] = 255;
    }
  }
  fs.mkdirSync(path.dirname(file), { recursive: true });
  fs.writeFileSync(file, PNG.sync.write(png));
}

/**
 * Two-class folder: "cold" images lean blue, "warm" images lean red, with a
 * per-image ripple so no two files are identical.
 */
export function makeToyFolder(root: string, perClass: number): void {
  for (let i = 0; i < perClass; i++) {
    const shade = 140 + 12 * i;
    writePng(path.join(root, 'cold', `img_${i}.png`), 24, 24, (x, y) => {
      const ripple = (x * 7 + y * 3 + i * 11) % 40;
      return [20 + ripple, 40 + ripple, Math.min(255, shade + ripple)];
    });
    writePng(path.join(root, 'warm', `img_${i}.png`), 24, 24, (x, y) => {
      const ripple = (x * 5 + y * 9 + i * 13) % 40;
      return [Math.min(255, shade + ripple), 40 + ripple, 20 + ripple];
    });
  }
}
