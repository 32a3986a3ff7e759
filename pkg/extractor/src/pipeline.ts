/**
 * Extraction pipeline: read image, caption it, embed all three texts and
 * images, pack records.
 *
 * An unreadable image skips that sample (logged, never fatal). An encoder
 * or captioner failure aborts, returning everything finished so far so the
 * caller can still write partial output.
 */

import { promises as fs } from 'fs';

import { l2normalize } from './models';
import { Captioner, Encoder, RawSample, SkippedSample, StoreRecord,
         toStoreLabel } from './types';

export interface ExtractLogger {
  warn(message: string): void;
}

export interface ExtractResult {
  records: StoreRecord[];
  skipped: SkippedSample[];
  /** Generated caption per extracted sample id. */
  generated: Record<number, string>;
  /** Present when a model backend failed; records hold the finished prefix. */
  aborted?: { id: number; error: string };
}

export async function extractSamples(
  samples: readonly RawSample[],
  encoder: Encoder,
  captioner: Captioner,
  log: ExtractLogger = console,
): Promise<ExtractResult> {
  const records: StoreRecord[] = [];
  const skipped: SkippedSample[] = [];
  const generated: Record<number, string> = {};

  for (const sample of samples) {
    let image: Buffer;
    try {
      image = await fs.readFile(sample.image);
    } catch (err) {
      const reason = `unreadable image ${sample.image}: ${(err as Error).message}`;
      skipped.push({ id: sample.id, reason });
      log.warn(`skipping sample ${sample.id}: ${reason}`);
      continue;
    }

    try {
      const gen = await captioner.caption(image, sample);
      const [hImage, hText, hGen] = await Promise.all([
        encoder.embedImage(image),
        encoder.embedText(sample.caption),
        encoder.embedText(gen),
      ]);
      records.push({
        id: sample.id,
        label: toStoreLabel(sample.label),
        image: l2normalize(hImage),
        text: l2normalize(hText),
        gen: l2normalize(hGen),
      });
      generated[sample.id] = gen;
    } catch (err) {
      return { records, skipped, generated,
               aborted: { id: sample.id, error: (err as Error).message } };
    }
  }

  // Single writer downstream; keep the output ordered by id regardless of
  // how the input was shuffled or parallelized.
  records.sort((a, b) => a.id - b.id);
  return { records, skipped, generated };
}
