import { describe, expect, it } from 'vitest';

import { parseRawSamples } from '../src/jsonl';

const line = (obj: unknown) => JSON.stringify(obj);

describe('raw sample parsing', () => {
  it('accepts well-formed lines and keeps input order', () => {
    const text = [
      line({ id: 3, image: 'a.jpg', caption: 'a cat', label: 'Real' }),
      line({ id: 1, image: 'b.jpg', caption: 'a dog', label: 'Fake' }),
      line({ id: 2, image: 'c.jpg', caption: 'a bird' }),
    ].join('\n');
    const { samples, errors } = parseRawSamples(text);
    expect(errors).toEqual([]);
    expect(samples.map((s) => s.id)).toEqual([3, 1, 2]);
    expect(samples[2].label).toBeUndefined();
  });

  it('skips blank lines without counting them as errors', () => {
    const text = `\n${line({ id: 1, image: 'x', caption: 'y' })}\n\n`;
    const { samples, errors } = parseRawSamples(text);
    expect(samples).toHaveLength(1);
    expect(errors).toEqual([]);
  });

  it('reports invalid JSON with its line number', () => {
    const text = [line({ id: 1, image: 'x', caption: 'y' }), '{oops'].join('\n');
    const { samples, errors } = parseRawSamples(text);
    expect(samples).toHaveLength(1);
    expect(errors).toHaveLength(1);
    expect(errors[0].line).toBe(2);
    expect(errors[0].message).toMatch(/not valid JSON/);
  });

  it('reports label strings other than Real/Fake per line', () => {
    const text = [
      line({ id: 1, image: 'x', caption: 'y', label: 'real' }),
      line({ id: 2, image: 'x', caption: 'y', label: 'Unknown' }),
      line({ id: 3, image: 'x', caption: 'y' }),
    ].join('\n');
    const { samples, errors } = parseRawSamples(text);
    expect(samples.map((s) => s.id)).toEqual([3]);
    expect(errors.map((e) => e.line)).toEqual([1, 2]);
    expect(errors[0].message).toMatch(/label/);
  });

  it('reports missing fields and empty captions', () => {
    const text = [
      line({ id: 1, caption: 'y' }),
      line({ id: 2, image: 'x', caption: '' }),
      line({ image: 'x', caption: 'y' }),
    ].join('\n');
    const { samples, errors } = parseRawSamples(text);
    expect(samples).toEqual([]);
    expect(errors.map((e) => e.line)).toEqual([1, 2, 3]);
  });

  it('rejects the second occurrence of a duplicate id', () => {
    const text = [
      line({ id: 4, image: 'x', caption: 'y' }),
      line({ id: 4, image: 'z', caption: 'w' }),
    ].join('\n');
    const { samples, errors } = parseRawSamples(text);
    expect(samples).toHaveLength(1);
    expect(samples[0].image).toBe('x');
    expect(errors[0]).toEqual({ line: 2, message: 'duplicate sample id 4' });
  });
});
