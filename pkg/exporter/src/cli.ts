#!/usr/bin/env node
/**
 * capgap-export <text|images|stats> ...
 *
 *   text   --captions caps.jsonl --out emb.bin --model dev/24
 *          [--batch-size 64] [--device cpu] [--normalize]
 *   images --dir imgs/ --out emb.bin --model dev/24 [same flags]
 *   stats  --embeddings emb.bin --tag text --out stats.json
 */

import { parseArgs } from 'node:util';

import { makeEncoder } from './encoder.js';
import { exportImages, exportStats, exportText, listImageFiles } from './export.js';

function usage(): never {
  console.error(
    'usage: capgap-export text   --captions FILE --out FILE --model DESC [--batch-size N] [--device cpu] [--normalize]\n' +
      '       capgap-export images --dir DIR --out FILE --model DESC [--batch-size N] [--device cpu] [--normalize]\n' +
      '       capgap-export stats  --embeddings FILE --tag image|text --out FILE',
  );
  process.exit(2);
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  if (!command) usage();

  if (command === 'stats') {
    const { values } = parseArgs({
      args: rest,
      options: {
        embeddings: { type: 'string' },
        tag: { type: 'string' },
        out: { type: 'string' },
      },
    });
    if (!values.embeddings || !values.out || !values.tag) usage();
    if (values.tag !== 'image' && values.tag !== 'text') {
      throw new Error(`--tag must be "image" or "text", got "${values.tag}"`);
    }
    const doc = exportStats(values.embeddings, values.tag, values.out);
    console.log(`wrote ${values.tag} stats for ${doc.sample_count} rows (dim ${doc.dim}) to ${values.out}`);
    return 0;
  }

  if (command !== 'text' && command !== 'images') usage();
  const { values } = parseArgs({
    args: rest,
    options: {
      captions: { type: 'string' },
      dir: { type: 'string' },
      out: { type: 'string' },
      model: { type: 'string' },
      'batch-size': { type: 'string', default: '64' },
      device: { type: 'string', default: 'cpu' },
      normalize: { type: 'boolean', default: false },
    },
  });
  if (!values.out || !values.model) usage();
  const batchSize = Number(values['batch-size']);
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    throw new Error(`--batch-size must be a positive integer, got "${values['batch-size']}"`);
  }
  if (values.device !== 'cpu') {
    throw new Error(`unsupported device "${values.device}" (only cpu is available)`);
  }
  const encoder = makeEncoder(values.model);
  const opts = { batchSize, normalize: values.normalize ?? false };

  if (command === 'text') {
    if (!values.captions) usage();
    const manifest = await exportText(values.captions, values.out, encoder, opts);
    console.log(`encoded ${manifest.count} captions (dim ${manifest.dim}) to ${values.out}`);
  } else {
    if (!values.dir) usage();
    const files = listImageFiles(values.dir);
    if (files.length === 0) {
      throw new Error(`no files found under ${values.dir}`);
    }
    const manifest = await exportImages(files, values.out, encoder, opts);
    console.log(`encoded ${manifest.count} images (dim ${manifest.dim}) to ${values.out}`);
  }
  return 0;
}

const entry = process.argv[1] ?? '';
if (entry.endsWith('cli.js') || entry.endsWith('capgap-export')) {
  main(process.argv.slice(2)).then(
    (code) => process.exit(code),
    (err) => {
      console.error(`error: ${err instanceof Error ? err.message : err}`);
      process.exit(1);
    },
  );
}
