/**
 * CVLM store writer and reader (all little endian):
 *
 *   header, 24 bytes: magic "CVLM" | version u32 (=1) | dim u32
 *                     | count u64 | flags u32
 *   record, 16 + 12*dim bytes: id u64 | label i8 | 7 zero pad
 *                     | image f32[dim] | text f32[dim] | gen f32[dim]
 *
 * The byte layout is the contract with the training engine; its `ingest`
 * command is the authority on whether a file is valid.
 */

import { writeFileSync, readFileSync } from 'fs';

import { StoreLabel, StoreRecord } from './types';

export const MAGIC = 'CVLM';
export const VERSION = 1;
export const HEADER_SIZE = 24;
export const FLAG_HAS_GEN = 1;

export const NORM_TOLERANCE = 1e-4;

export function recordSize(dim: number): number {
  return 16 + 12 * dim;
}

function checkVector(name: string, vec: Float32Array, dim: number, id: number): void {
  if (vec.length !== dim) {
    throw new Error(`record ${id}: ${name} has ${vec.length} values, expected ${dim}`);
  }
  let sq = 0;
  for (let i = 0; i < dim; i++) {
    if (!Number.isFinite(vec[i])) {
      throw new Error(`record ${id}: ${name} contains a non-finite value`);
    }
    sq += vec[i] * vec[i];
  }
  if (Math.abs(Math.sqrt(sq) - 1) > NORM_TOLERANCE) {
    throw new Error(`record ${id}: ${name} is not unit norm (|v| = ${Math.sqrt(sq)})`);
  }
}

export function encodeStore(records: readonly StoreRecord[], dim: number): Buffer {
  const buf = Buffer.alloc(HEADER_SIZE + records.length * recordSize(dim));
  buf.write(MAGIC, 0, 4, 'ascii');
  buf.writeUInt32LE(VERSION, 4);
  buf.writeUInt32LE(dim, 8);
  buf.writeBigUInt64LE(BigInt(records.length), 12);
  buf.writeUInt32LE(FLAG_HAS_GEN, 20);

  const seen = new Set<number>();
  let off = HEADER_SIZE;
  for (const rec of records) {
    if (seen.has(rec.id)) throw new Error(`duplicate sample id ${rec.id}`);
    seen.add(rec.id);
    if (rec.label !== -1 && rec.label !== 0 && rec.label !== 1) {
      throw new Error(`record ${rec.id}: invalid label value ${rec.label}`);
    }
    buf.writeBigUInt64LE(BigInt(rec.id), off);
    buf.writeInt8(rec.label, off + 8);
    // bytes off+9 .. off+15 stay zero (pad)
    let pos = off + 16;
    for (const [name, vec] of [['image', rec.image], ['text', rec.text],
                               ['gen', rec.gen]] as const) {
      checkVector(name, vec, dim, rec.id);
      for (let k = 0; k < dim; k++) {
        buf.writeFloatLE(vec[k], pos);
        pos += 4;
      }
    }
    off += recordSize(dim);
  }
  return buf;
}

export function writeStoreFile(path: string, records: readonly StoreRecord[],
                               dim: number): void {
  writeFileSync(path, encodeStore(records, dim));
}

export interface DecodedStore {
  dim: number;
  flags: number;
  records: StoreRecord[];
}

/** Inverse of encodeStore, used for round-trip checks. */
export function decodeStore(buf: Buffer): DecodedStore {
  if (buf.length < HEADER_SIZE) throw new Error('file shorter than the header');
  if (buf.toString('ascii', 0, 4) !== MAGIC) throw new Error('bad magic');
  const version = buf.readUInt32LE(4);
  if (version !== VERSION) throw new Error(`unsupported version ${version}`);
  const dim = buf.readUInt32LE(8);
  const count = Number(buf.readBigUInt64LE(12));
  const flags = buf.readUInt32LE(20);
  if (buf.length !== HEADER_SIZE + count * recordSize(dim)) {
    throw new Error('size mismatch between header and file length');
  }
  const records: StoreRecord[] = [];
  let off = HEADER_SIZE;
  for (let i = 0; i < count; i++) {
    const id = Number(buf.readBigUInt64LE(off));
    const label = buf.readInt8(off + 8) as StoreLabel;
    const read = (slot: number) => {
      const vec = new Float32Array(dim);
      const base = off + 16 + slot * 4 * dim;
      for (let k = 0; k < dim; k++) vec[k] = buf.readFloatLE(base + 4 * k);
      return vec;
    };
    records.push({ id, label, image: read(0), text: read(1), gen: read(2) });
    off += recordSize(dim);
  }
  return { dim, flags, records };
}

export interface SplitManifest {
  train_labeled: number[];
  train_unlabeled: number[];
  val: number[];
  test: number[];
}

/**
 * Labeled records go to the labeled training pool, the rest to the
 * unlabeled one; carving out val/test is the training side's business.
 */
export function buildManifest(records: readonly StoreRecord[]): SplitManifest {
  const manifest: SplitManifest = {
    train_labeled: [], train_unlabeled: [], val: [], test: [],
  };
  for (const rec of records) {
    (rec.label === -1 ? manifest.train_unlabeled : manifest.train_labeled)
      .push(rec.id);
  }
  return manifest;
}

export function readStoreFile(path: string): DecodedStore {
  return decodeStore(readFileSync(path));
}
