/**
 * Encoder backends.
 *
 * `dev/<dim>` is a deterministic hash-based embedder: the same input bytes
 * always map to the same vector, independent of batch size, platform, and
 * process. It exists so pipelines, fixtures, and CI can run without any
 * model download; it carries no semantic signal.
 *
 * `http(s)://...` posts batches to an external encoding service.
 */

import { createHash } from 'node:crypto';

export interface Encoder {
  /** Identifier recorded in manifests, e.g. "dev/24". */
  readonly id: string;
  readonly dim: number;
  encodeBatch(items: Buffer[]): Promise<Float32Array[]>;
}

/**
 * Expand sha256(content || counter) digests into dim floats in [-1, 1).
 * Each 4-byte little-endian word of a digest yields one value.
 */
export function hashEmbedding(content: Buffer, dim: number): Float32Array {
  const out = new Float32Array(dim);
  let filled = 0;
  for (let counter = 0; filled < dim; counter++) {
    const digest = createHash('sha256')
      .update(content)
      .update(String(counter))
      .digest();
    for (let off = 0; off + 4 <= digest.length && filled < dim; off += 4) {
      out[filled++] = digest.readUInt32LE(off) / 2 ** 31 - 1;
    }
  }
  return out;
}

export class DevEncoder implements Encoder {
  readonly id: string;
  readonly dim: number;

  constructor(dim: number) {
    if (!Number.isInteger(dim) || dim < 1) {
      throw new Error(`dev encoder dim must be a positive integer, got ${dim}`);
    }
    this.dim = dim;
    this.id = `dev/${dim}`;
  }

  async encodeBatch(items: Buffer[]): Promise<Float32Array[]> {
    return items.map((item) => hashEmbedding(item, this.dim));
  }
}

export class HttpEncoder implements Encoder {
  readonly id: string;
  readonly dim: number;
  private readonly url: string;

  constructor(url: string, model: string, dim: number) {
    this.url = url.endsWith('/') ? url + 'encode' : url + '/encode';
    this.id = model;
    this.dim = dim;
  }

  async encodeBatch(items: Buffer[]): Promise<Float32Array[]> {
    const response = await fetch(this.url, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({
        model: this.id,
        inputs: items.map((b) => b.toString('base64')),
      }),
    });
    if (!response.ok) {
      throw new Error(`encoder service returned HTTP ${response.status}`);
    }
    const payload = (await response.json()) as { embeddings?: number[][] };
    if (!Array.isArray(payload.embeddings) || payload.embeddings.length !== items.length) {
      throw new Error(
        `encoder service returned ${payload.embeddings?.length ?? 0} embeddings for ${items.length} inputs`,
      );
    }
    return payload.embeddings.map((row, i) => {
      if (row.length !== this.dim) {
        throw new Error(`embedding ${i} has dim ${row.length}, expected ${this.dim}`);
      }
      return Float32Array.from(row);
    });
  }
}

/**
 * Parse a --model descriptor: "dev/<dim>" for the built-in hash encoder, or
 * "<http url>#<model>@<dim>" for a remote service.
 */
export function makeEncoder(descriptor: string): Encoder {
  if (descriptor.startsWith('dev/')) {
    const dim = Number(descriptor.slice(4));
    return new DevEncoder(dim);
  }
  if (descriptor.startsWith('http://') || descriptor.startsWith('https://')) {
    const hash = descriptor.indexOf('#');
    const at = descriptor.lastIndexOf('@');
    if (hash < 0 || at < hash) {
      throw new Error(
        `remote model descriptor must look like URL#model@dim, got "${descriptor}"`,
      );
    }
    const url = descriptor.slice(0, hash);
    const model = descriptor.slice(hash + 1, at);
    const dim = Number(descriptor.slice(at + 1));
    if (!Number.isInteger(dim) || dim < 1) {
      throw new Error(`remote model dim must be a positive integer, got "${descriptor.slice(at + 1)}"`);
    }
    return new HttpEncoder(url, model, dim);
  }
  throw new Error(`unknown model descriptor "${descriptor}" (use dev/<dim> or URL#model@dim)`);
}
