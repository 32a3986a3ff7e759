import { describe, expect, it } from 'vitest';

import { IdentityCaptioner, MockEncoder, l2normalize } from '../src/models';

function dot(a: Float32Array, b: Float32Array): number {
  let s = 0;
  for (let i = 0; i < a.length; i++) s += a[i] * b[i];
  return s;
}

describe('mock encoder', () => {
  it('emits unit vectors well within the 1e-4 contract', async () => {
    const enc = new MockEncoder(48);
    for (const text of ['a', 'a cat sat', 'x'.repeat(500)]) {
      const v = await enc.embedText(text);
      expect(v).toHaveLength(48);
      expect(Math.abs(Math.sqrt(dot(v, v)) - 1)).toBeLessThan(1e-6);
    }
    const img = await enc.embedImage(Buffer.from([1, 2, 3]));
    expect(Math.abs(Math.sqrt(dot(img, img)) - 1)).toBeLessThan(1e-6);
  });

  it('is a pure function of its input bytes', async () => {
    const enc = new MockEncoder(16);
    const first = await enc.embedText('same words');
    const second = await new MockEncoder(16).embedText('same words');
    expect(first).toEqual(second);
    const a = await enc.embedText('alpha');
    const b = await enc.embedText('beta');
    expect(Math.abs(dot(a, b))).toBeLessThan(0.999);
  });

  it('gives identical caption and generated caption a score of 1', async () => {
    const enc = new MockEncoder(32);
    const text = await enc.embedText('the original caption');
    const gen = await enc.embedText('the original caption');
    expect(dot(text, gen)).toBeCloseTo(1.0, 6);
  });

  it('rejects a non-positive dimension', () => {
    expect(() => new MockEncoder(0)).toThrow(/positive integer/);
  });
});

describe('identity captioner', () => {
  it('echoes the sample caption and records greedy decoding', async () => {
    const cap = new IdentityCaptioner();
    const sample = { id: 1, image: 'x.jpg', caption: 'two dogs on a beach' };
    expect(await cap.caption(Buffer.alloc(4), sample)).toBe(sample.caption);
    expect(cap.decoding).toEqual({ strategy: 'greedy' });
  });
});

describe('l2normalize', () => {
  it('normalizes and refuses zero vectors', () => {
    const v = l2normalize([3, 4]);
    expect(v[0]).toBeCloseTo(0.6, 6);
    expect(v[1]).toBeCloseTo(0.8, 6);
    expect(() => l2normalize([0, 0])).toThrow(/zero or non-finite/);
  });
});
