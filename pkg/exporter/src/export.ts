/**
 * Export flows: captions or image files in, embedding binary + manifest out.
 * Batches run sequentially; file writing is single-threaded.
 */

import { createHash } from 'node:crypto';
import { readFileSync, readdirSync, statSync, writeFileSync } from 'node:fs';
import { basename, join } from 'node:path';

import { Encoder } from './encoder.js';
import {
  EmbeddingMatrix,
  StatsDoc,
  computeStats,
  readCaptionLines,
  readEmbeddings,
  writeEmbeddings,
  writeStats,
} from './formats.js';

export interface ExportOptions {
  batchSize: number;
  normalize: boolean;
}

export interface ExportManifest {
  encoder: string;
  dim: number;
  count: number;
  normalized: boolean;
  batchSize: number;
  inputs: Record<string, string>;
  outputs: Record<string, { sha256: string; bytes: number }>;
}

function sha256File(path: string): { sha256: string; bytes: number } {
  const data = readFileSync(path);
  return { sha256: createHash('sha256').update(data).digest('hex'), bytes: data.length };
}

function l2Normalize(row: Float32Array): Float32Array {
  let sum = 0;
  for (const v of row) sum += v * v;
  const norm = Math.sqrt(sum);
  if (norm === 0) return row;
  const out = new Float32Array(row.length);
  for (let i = 0; i < row.length; i++) out[i] = row[i] / norm;
  return out;
}

async function encodeAll(
  encoder: Encoder,
  items: Buffer[],
  opts: ExportOptions,
): Promise<Float32Array[]> {
  const rows: Float32Array[] = [];
  for (let start = 0; start < items.length; start += opts.batchSize) {
    const batch = await encoder.encodeBatch(items.slice(start, start + opts.batchSize));
    for (const row of batch) {
      rows.push(opts.normalize ? l2Normalize(row) : row);
    }
  }
  return rows;
}

function writeManifest(
  outPath: string,
  encoder: Encoder,
  count: number,
  opts: ExportOptions,
  inputs: Record<string, string>,
): ExportManifest {
  const manifest: ExportManifest = {
    encoder: encoder.id,
    dim: encoder.dim,
    count,
    normalized: opts.normalize,
    batchSize: opts.batchSize,
    inputs,
    outputs: { [basename(outPath)]: sha256File(outPath) },
  };
  writeFileSync(outPath + '.manifest.json', JSON.stringify(manifest, null, 2) + '\n');
  return manifest;
}

/** Encode caption texts; row i of the binary corresponds to JSONL line i. */
export async function exportText(
  captionsPath: string,
  outPath: string,
  encoder: Encoder,
  opts: ExportOptions,
): Promise<ExportManifest> {
  const records = readCaptionLines(captionsPath);
  const rows = await encodeAll(
    encoder,
    records.map((r) => Buffer.from(r.text, 'utf-8')),
    opts,
  );
  writeEmbeddings(outPath, rows, encoder.dim);
  return writeManifest(outPath, encoder, rows.length, opts, { captions: captionsPath });
}

/** List image files under a directory, sorted by path for determinism. */
export function listImageFiles(dir: string): string[] {
  const files = readdirSync(dir)
    .map((name) => join(dir, name))
    .filter((p) => statSync(p).isFile());
  files.sort();
  return files;
}

/** Encode image files (given explicitly or as a directory), sorted order. */
export async function exportImages(
  paths: string[],
  outPath: string,
  encoder: Encoder,
  opts: ExportOptions,
): Promise<ExportManifest> {
  const sorted = [...paths].sort();
  const rows = await encodeAll(
    encoder,
    sorted.map((p) => readFileSync(p)),
    opts,
  );
  writeEmbeddings(outPath, rows, encoder.dim);
  return writeManifest(outPath, encoder, rows.length, opts, {
    images: sorted.length === 1 ? sorted[0] : `${sorted.length} files`,
  });
}

/** Recompute per-dimension stats from an exported binary. */
export function exportStats(embeddingsPath: string, tag: string, outPath: string): StatsDoc {
  const matrix: EmbeddingMatrix = readEmbeddings(embeddingsPath);
  const doc = computeStats(matrix, tag);
  writeStats(outPath, doc);
  return doc;
}
