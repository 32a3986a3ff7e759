import { spawnSync } from 'child_process';
import { existsSync, mkdtempSync, readFileSync, writeFileSync } from 'fs';
import { tmpdir } from 'os';
import { join, resolve } from 'path';

import { describe, expect, it } from 'vitest';

import { decodeStore } from '../src/store';

const CLI = resolve(__dirname, '..', 'dist', 'cli.js');

function writeCorpus(n: number): { raw: string; out: string } {
  const dir = mkdtempSync(join(tmpdir(), 'cli-'));
  const lines: string[] = [];
  for (let i = 0; i < n; i++) {
    const image = join(dir, `img_${i}.bin`);
    writeFileSync(image, Buffer.alloc(16, i));
    lines.push(JSON.stringify({
      id: i + 1, image, caption: `sample ${i}`,
      ...(i % 2 === 0 ? { label: i % 4 === 0 ? 'Real' : 'Fake' } : {}),
    }));
  }
  const raw = join(dir, 'samples.jsonl');
  writeFileSync(raw, lines.join('\n') + '\n');
  return { raw, out: join(dir, 'out') };
}

describe.skipIf(!existsSync(CLI))('built command line', () => {
  it('extracts a ten sample corpus that the training tool accepts', () => {
    const { raw, out } = writeCorpus(10);
    const run = spawnSync('node', [CLI, 'extract', '--input', raw,
                                   '--out', out, '--mock'],
                          { encoding: 'utf8', timeout: 60_000 });
    expect(run.status, run.stderr).toBe(0);

    const storePath = join(out, 'store.cvlm');
    const decoded = decodeStore(readFileSync(storePath));
    expect(decoded.records).toHaveLength(10);
    expect(decoded.records.map((r) => r.id))
      .toEqual([1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);

    const metadata = JSON.parse(readFileSync(join(out, 'metadata.json'), 'utf8'));
    expect(metadata.records).toBe(10);
    expect(metadata.decoding).toEqual({ strategy: 'greedy' });
    expect(metadata.normalized).toBe(true);

    const manifest = JSON.parse(readFileSync(join(out, 'manifest.json'), 'utf8'));
    expect(manifest.train_labeled.length).toBe(5);
    expect(manifest.train_unlabeled.length).toBe(5);

    // hand the store to the primary tool when it is installed
    const ingest = spawnSync('consem', ['ingest', storePath],
                             { encoding: 'utf8', timeout: 60_000 });
    if (ingest.error && (ingest.error as NodeJS.ErrnoException).code === 'ENOENT') {
      return; // training package not on PATH here; covered by its own suite
    }
    expect(ingest.status, ingest.stderr).toBe(0);
  });

  it('reports schema errors per line and exits cleanly', () => {
    const { raw, out } = writeCorpus(2);
    const text = readFileSync(raw, 'utf8');
    writeFileSync(raw, text + JSON.stringify({ id: 3, image: 'x', caption: 'y',
                                               label: 'Unknown' }) + '\n');
    const run = spawnSync('node', [CLI, 'extract', '--input', raw,
                                   '--out', out, '--mock'],
                          { encoding: 'utf8', timeout: 60_000 });
    expect(run.status, run.stderr).toBe(0);
    expect(run.stderr).toMatch(/line 3/);
    const metadata = JSON.parse(readFileSync(join(out, 'metadata.json'), 'utf8'));
    expect(metadata.schema_errors).toHaveLength(1);
  });

  it('refuses to run without a model backend', () => {
    const { raw, out } = writeCorpus(1);
    const run = spawnSync('node', [CLI, 'extract', '--input', raw, '--out', out],
                          { encoding: 'utf8', timeout: 60_000 });
    expect(run.status).not.toBe(0);
    expect(run.stderr).toMatch(/--mock/);
  });
});
