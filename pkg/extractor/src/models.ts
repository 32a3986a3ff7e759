/**
 * Model backends behind injectable interfaces.
 *
 * The shipped implementations are offline mocks: the encoder hashes its
 * input into a deterministic unit vector, the captioner echoes the sample
 * caption. Real vision-language backends implement the same two interfaces
 * and plug into the pipeline unchanged; nothing here downloads anything.
 */

import { Captioner, DecodingConfig, Encoder, RawSample } from './types';

function fnv1a(bytes: Uint8Array): number {
  let h = 0x811c9dc5;
  for (const b of bytes) {
    h ^= b;
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

// Small fast PRNG; quality is irrelevant here, determinism is not.
function mulberry32(seed: number): () => number {
  let s = seed >>> 0;
  return () => {
    s = (s + 0x6d2b79f5) | 0;
    let t = Math.imul(s ^ (s >>> 15), 1 | s);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function l2normalize(values: ArrayLike<number>): Float32Array {
  let sq = 0;
  for (let i = 0; i < values.length; i++) sq += values[i] * values[i];
  const norm = Math.sqrt(sq);
  if (!(norm > 0) || !Number.isFinite(norm)) {
    throw new Error('cannot normalize a zero or non-finite vector');
  }
  const out = new Float32Array(values.length);
  for (let i = 0; i < values.length; i++) out[i] = values[i] / norm;
  return out;
}

/**
 * Deterministic stand-in encoder: the embedding direction is a pure
 * function of the input bytes, so identical texts always land on the same
 * unit vector (and their inner product is 1).
 */
export class MockEncoder implements Encoder {
  readonly id: string;
  readonly dim: number;

  constructor(dim = 32) {
    if (!Number.isInteger(dim) || dim < 1) {
      throw new Error(`encoder dim must be a positive integer, got ${dim}`);
    }
    this.dim = dim;
    this.id = `mock-hash-${dim}d`;
  }

  async embedImage(image: Buffer): Promise<Float32Array> {
    return this.vectorFrom(image);
  }

  async embedText(text: string): Promise<Float32Array> {
    return this.vectorFrom(Buffer.from(text, 'utf8'));
  }

  private vectorFrom(bytes: Buffer): Float32Array {
    const next = mulberry32(fnv1a(bytes));
    const raw = new Float64Array(this.dim);
    for (let i = 0; i < this.dim; i++) raw[i] = next() * 2 - 1;
    return l2normalize(raw);
  }
}

/** Echoes the sample caption as the "generated" one; greedy by definition. */
export class IdentityCaptioner implements Captioner {
  readonly id = 'mock-identity';
  readonly decoding: DecodingConfig = { strategy: 'greedy' };

  async caption(_image: Buffer, sample: RawSample): Promise<string> {
    return sample.caption;
  }
}
