/**
 * Raw dataset reader: one JSON object per line, validated per line.
 *
 * Bad lines never abort the run; they come back as {line, message} entries
 * so a long scrape with a few broken rows still extracts everything else.
 */

import { z } from 'zod';

import { LineError, RawSample } from './types';

const rawSampleSchema = z.object({
  id: z.number().int().nonnegative(),
  image: z.string().min(1),
  caption: z.string().min(1),
  label: z.enum(['Real', 'Fake']).optional(),
});

export interface ParsedSamples {
  samples: RawSample[];
  errors: LineError[];
}

export function parseRawSamples(text: string): ParsedSamples {
  const samples: RawSample[] = [];
  const errors: LineError[] = [];
  const seen = new Set<number>();

  const lines = text.split('\n');
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line === '') continue;
    const lineNo = i + 1;

    let parsed: unknown;
    try {
      parsed = JSON.parse(line);
    } catch (err) {
      errors.push({ line: lineNo, message: `not valid JSON: ${String(err)}` });
      continue;
    }

    const result = rawSampleSchema.safeParse(parsed);
    if (!result.success) {
      const detail = result.error.issues
        .map((issue) => `${issue.path.join('.') || '<root>'}: ${issue.message}`)
        .join('; ');
      errors.push({ line: lineNo, message: detail });
      continue;
    }

    if (seen.has(result.data.id)) {
      errors.push({ line: lineNo, message: `duplicate sample id ${result.data.id}` });
      continue;
    }
    seen.add(result.data.id);
    samples.push(result.data);
  }
  return { samples, errors };
}
