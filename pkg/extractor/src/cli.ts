#!/usr/bin/env node
/**
 * cvlm-extract: raw JSONL dataset in, CVLM store + manifest + metadata out.
 *
 *   cvlm-extract extract --input samples.jsonl --out outdir --mock
 *
 * Exit codes: 0 success (bad input lines are listed, not fatal), 1 when a
 * model backend fails mid-run (partial output is still written), 2 usage.
 */

import { mkdirSync, readFileSync, writeFileSync } from 'fs';
import { join } from 'path';

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { parseRawSamples } from './jsonl';
import { IdentityCaptioner, MockEncoder } from './models';
import { extractSamples } from './pipeline';
import { buildManifest, writeStoreFile } from './store';
import { Captioner, Encoder } from './types';

interface ExtractArgs {
  input: string;
  out: string;
  mock: boolean;
  dim: number;
}

function pickBackends(args: ExtractArgs): { encoder: Encoder; captioner: Captioner } {
  if (!args.mock) {
    // Real encoders plug in through the library API (see README); the CLI
    // deliberately ships without model downloads.
    throw new Error('no built-in model backend; pass --mock or use the library API');
  }
  return { encoder: new MockEncoder(args.dim), captioner: new IdentityCaptioner() };
}

async function runExtract(args: ExtractArgs): Promise<number> {
  const { encoder, captioner } = pickBackends(args);
  const { samples, errors } = parseRawSamples(readFileSync(args.input, 'utf8'));
  for (const err of errors) {
    console.error(`line ${err.line}: ${err.message}`);
  }

  const result = await extractSamples(samples, encoder, captioner, console);

  mkdirSync(args.out, { recursive: true });
  writeStoreFile(join(args.out, 'store.cvlm'), result.records, encoder.dim);
  writeFileSync(join(args.out, 'manifest.json'),
                JSON.stringify(buildManifest(result.records), null, 2) + '\n');

  const metadata = {
    encoder: encoder.id,
    captioner: captioner.id,
    decoding: captioner.decoding,
    dim: encoder.dim,
    normalized: true,
    records: result.records.length,
    skipped: result.skipped,
    schema_errors: errors,
    ...(result.aborted ? { aborted: result.aborted } : {}),
  };
  writeFileSync(join(args.out, 'metadata.json'),
                JSON.stringify(metadata, null, 2) + '\n');

  console.log(JSON.stringify({
    out: args.out,
    records: result.records.length,
    skipped: result.skipped.length,
    schema_errors: errors.length,
  }));

  if (result.aborted) {
    console.error(`aborted at sample ${result.aborted.id}: ${result.aborted.error}`);
    return 1;
  }
  return 0;
}

export async function main(argv: string[]): Promise<number> {
  let code = 0;
  await yargs(argv)
    .scriptName('cvlm-extract')
    .command(
      'extract',
      'extract embeddings from a raw JSONL dataset',
      (cmd) => cmd
        .option('input', { type: 'string', demandOption: true,
                           describe: 'raw dataset, one JSON sample per line' })
        .option('out', { type: 'string', demandOption: true,
                         describe: 'output directory' })
        .option('mock', { type: 'boolean', default: false,
                          describe: 'use the offline mock models' })
        .option('dim', { type: 'number', default: 32,
                         describe: 'embedding dimension (mock backend)' }),
      async (args) => {
        code = await runExtract(args as unknown as ExtractArgs);
      },
    )
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      console.error(msg ?? err?.message ?? 'unknown error');
      process.exit(err ? 1 : 2);
    })
    .parseAsync();
  return code;
}

if (require.main === module) {
  main(hideBin(process.argv)).then((code) => process.exit(code));
}
