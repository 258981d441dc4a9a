/**
 * Binary embedding files, caption JSONL, and stats JSON.
 *
 * The embedding layout matches the consuming engine byte for byte
 * (little-endian):
 *
 *   offset 0   magic "TOMC"
 *   offset 4   format version, u32 (= 1)
 *   offset 8   dtype code, u32 (0 = float32)
 *   offset 12  dim, u32
 *   offset 16  row count, u64
 *   offset 24  count * dim float32 values, row-major
 */

import { readFileSync, writeFileSync } from 'node:fs';

export const EMBEDDING_MAGIC = 'TOMC';
export const FORMAT_VERSION = 1;
export const DTYPE_FLOAT32 = 0;
export const HEADER_SIZE = 24;

export interface EmbeddingMatrix {
  dim: number;
  count: number;
  /** Row-major values, length count * dim. */
  data: Float32Array;
}

export interface CaptionLine {
  id: number;
  text: string;
  source: string;
}

export interface StatsDoc {
  version: number;
  dim: number;
  modality_tag: string;
  sample_count: number;
  mean: number[];
  std: number[];
}

export class FormatError extends Error {
  constructor(message: string, readonly offset: number) {
    super(`${message} (byte offset ${offset})`);
    this.name = 'FormatError';
  }
}

export function embeddingBlockBytes(rows: Float32Array[], dim: number): Buffer {
  const count = rows.length;
  const buf = Buffer.alloc(HEADER_SIZE + count * dim * 4);
  buf.write(EMBEDDING_MAGIC, 0, 'ascii');
  buf.writeUInt32LE(FORMAT_VERSION, 4);
  buf.writeUInt32LE(DTYPE_FLOAT32, 8);
  buf.writeUInt32LE(dim, 12);
  buf.writeBigUInt64LE(BigInt(count), 16);
  const view = new DataView(buf.buffer, buf.byteOffset + HEADER_SIZE);
  for (let r = 0; r < count; r++) {
    const row = rows[r];
    if (row.length !== dim) {
      throw new Error(`row ${r} has ${row.length} values, expected ${dim}`);
    }
    for (let d = 0; d < dim; d++) {
      view.setFloat32((r * dim + d) * 4, row[d], true);
    }
  }
  return buf;
}

export function writeEmbeddings(path: string, rows: Float32Array[], dim: number): void {
  writeFileSync(path, embeddingBlockBytes(rows, dim));
}

export function readEmbeddings(path: string): EmbeddingMatrix {
  const buf = readFileSync(path);
  if (buf.length < HEADER_SIZE) {
    throw new FormatError('truncated embedding header', buf.length);
  }
  if (buf.toString('ascii', 0, 4) !== EMBEDDING_MAGIC) {
    throw new FormatError(`bad embedding magic, expected "${EMBEDDING_MAGIC}"`, 0);
  }
  const version = buf.readUInt32LE(4);
  if (version !== FORMAT_VERSION) {
    throw new FormatError(`unsupported embedding format version ${version}`, 4);
  }
  const dtype = buf.readUInt32LE(8);
  if (dtype !== DTYPE_FLOAT32) {
    throw new FormatError(`unsupported dtype code ${dtype}`, 8);
  }
  const dim = buf.readUInt32LE(12);
  if (dim === 0) {
    throw new FormatError('dim must be positive', 12);
  }
  const countBig = buf.readBigUInt64LE(16);
  if (countBig > BigInt(Number.MAX_SAFE_INTEGER)) {
    throw new FormatError(`row count ${countBig} too large`, 16);
  }
  const count = Number(countBig);
  const payloadLen = count * dim * 4;
  if (buf.length < HEADER_SIZE + payloadLen) {
    throw new FormatError(
      `truncated embedding payload: need ${payloadLen} bytes, have ${buf.length - HEADER_SIZE}`,
      buf.length,
    );
  }
  if (buf.length > HEADER_SIZE + payloadLen) {
    throw new FormatError('trailing bytes after embedding payload', HEADER_SIZE + payloadLen);
  }
  const view = new DataView(buf.buffer, buf.byteOffset + HEADER_SIZE, payloadLen);
  const data = new Float32Array(count * dim);
  for (let i = 0; i < data.length; i++) {
    data[i] = view.getFloat32(i * 4, true);
  }
  return { dim, count, data };
}

export function readCaptionLines(path: string): CaptionLine[] {
  const text = readFileSync(path, 'utf-8');
  const records: CaptionLine[] = [];
  const lines = text.split('\n');
  for (let i = 0; i < lines.length; i++) {
    const raw = lines[i].trim();
    if (raw === '') continue;
    let parsed: unknown;
    try {
      parsed = JSON.parse(raw);
    } catch (err) {
      throw new Error(`${path} line ${i + 1}: invalid JSON: ${(err as Error).message}`);
    }
    const obj = parsed as Record<string, unknown>;
    if (typeof obj !== 'object' || obj === null || Array.isArray(obj)) {
      throw new Error(`${path} line ${i + 1}: expected an object`);
    }
    if (!Number.isInteger(obj.id) || (obj.id as number) < 0) {
      throw new Error(`${path} line ${i + 1}: "id" must be a non-negative integer`);
    }
    if (typeof obj.text !== 'string' || obj.text === '') {
      throw new Error(`${path} line ${i + 1}: "text" must be a non-empty string`);
    }
    records.push({
      id: obj.id as number,
      text: obj.text,
      source: typeof obj.source === 'string' ? obj.source : '',
    });
  }
  return records;
}

export function writeCaptions(path: string, records: CaptionLine[]): void {
  const lines = records.map((r) =>
    JSON.stringify({ id: r.id, text: r.text, source: r.source }),
  );
  writeFileSync(path, lines.length ? lines.join('\n') + '\n' : '');
}

/** Per-dimension mean and population (1/N) standard deviation. */
export function computeStats(matrix: EmbeddingMatrix, tag: string): StatsDoc {
  const { dim, count, data } = matrix;
  if (count < 2) {
    throw new Error(`need >= 2 rows to compute stats, got ${count}`);
  }
  const mean = new Float64Array(dim);
  for (let r = 0; r < count; r++) {
    for (let d = 0; d < dim; d++) {
      mean[d] += data[r * dim + d];
    }
  }
  for (let d = 0; d < dim; d++) mean[d] /= count;
  const variance = new Float64Array(dim);
  for (let r = 0; r < count; r++) {
    for (let d = 0; d < dim; d++) {
      const delta = data[r * dim + d] - mean[d];
      variance[d] += delta * delta;
    }
  }
  const std = new Float64Array(dim);
  for (let d = 0; d < dim; d++) std[d] = Math.sqrt(variance[d] / count);
  return {
    version: 1,
    dim,
    modality_tag: tag,
    sample_count: count,
    mean: Array.from(mean),
    std: Array.from(std),
  };
}

export function writeStats(path: string, doc: StatsDoc): void {
  writeFileSync(path, JSON.stringify(doc));
}
