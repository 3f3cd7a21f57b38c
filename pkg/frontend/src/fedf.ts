/**
 * FEDF feature-file codec.
 *
 * Layout (little-endian):
 *   magic    4 bytes  "FEDF"
 *   version  u32      1
 *   d        u32      feature dimension
 *   C        u32      number of classes
 *   N        u64      number of rows
 *   labels   N x u32
 *   features N x d float32, row-major
 */

export const FEDF_MAGIC = 'FEDF';
export const FEDF_VERSION = 1;
export const HEADER_BYTES = 24;

export interface FedfData {
  dim: number;
  numClasses: number;
  labels: Uint32Array;
  /** Row-major (N * dim) values. */
  features: Float32Array;
}

export function encodeFedf(data: FedfData): Buffer {
  const n = data.labels.length;
  if (data.features.length !== n * data.dim) {
    throw new Error(
      `feature payload is ${data.features.length} values, ` +
      `expected ${n} x ${data.dim}`,
    );
  }
  for (const label of data.labels) {
    if (label >= data.numClasses) {
      throw new Error(`label ${label} out of range for ${data.numClasses} classes`);
    }
  }
  const buffer = Buffer.alloc(HEADER_BYTES + n * 4 + n * data.dim * 4);
  const view = new DataView(buffer.buffer, buffer.byteOffset);
  buffer.write(FEDF_MAGIC, 0, 'ascii');
  view.setUint32(4, FEDF_VERSION, true);
  view.setUint32(8, data.dim, true);
  view.setUint32(12, data.numClasses, true);
  view.setBigUint64(16, BigInt(n), true);
  let offset = HEADER_BYTES;
  for (const label of data.labels) {
    view.setUint32(offset, label, true);
    offset += 4;
  }
  for (const value of data.features) {
    view.setFloat32(offset, value, true);
    offset += 4;
  }
  return buffer;
}

export function decodeFedf(buffer: Buffer): FedfData {
  if (buffer.length < HEADER_BYTES) {
    throw new Error('truncated header');
  }
  const view = new DataView(buffer.buffer, buffer.byteOffset, buffer.length);
  if (buffer.toString('ascii', 0, 4) !== FEDF_MAGIC) {
    throw new Error('bad magic');
  }
  const version = view.getUint32(4, true);
  if (version !== FEDF_VERSION) {
    throw new Error(`unsupported version ${version}`);
  }
  const dim = view.getUint32(8, true);
  const numClasses = view.getUint32(12, true);
  const n = Number(view.getBigUint64(16, true));
  const expected = HEADER_BYTES + n * 4 + n * dim * 4;
  if (buffer.length !== expected) {
    throw new Error(`payload is ${buffer.length} bytes, expected ${expected}`);
  }
  const labels = new Uint32Array(n);
  let offset = HEADER_BYTES;
  for (let i = 0; i < n; i++) {
    labels[i] = view.getUint32(offset, true);
    offset += 4;
  }
  const features = new Float32Array(n * dim);
  for (let i = 0; i < features.length; i++) {
    features[i] = view.getFloat32(offset, true);
    offset += 4;
  }
  return { dim, numClasses, labels, features };
}
