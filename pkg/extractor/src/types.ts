/** One raw dataset row: a JSON object per line of the input file. */
export interface RawSample {
  id: number;
  /** Path to the image file. */
  image: string;
  caption: string;
  /** Ground truth when known; absent means unlabeled. */
  label?: 'Real' | 'Fake';
}

/** Store encoding of a label: 0 real, 1 fake, -1 unlabeled. */
export type StoreLabel = -1 | 0 | 1;

export interface StoreRecord {
  id: number;
  label: StoreLabel;
  image: Float32Array;
  text: Float32Array;
  gen: Float32Array;
}

export interface LineError {
  line: number;
  message: string;
}

export interface SkippedSample {
  id: number;
  reason: string;
}

/** Decoding settings echoed into run metadata so outputs are replayable. */
export interface DecodingConfig {
  strategy: 'greedy';
  [key: string]: unknown;
}

export interface Encoder {
  readonly id: string;
  readonly dim: number;
  embedImage(image: Buffer): Promise<Float32Array>;
  embedText(text: string): Promise<Float32Array>;
}

export interface Captioner {
  readonly id: string;
  readonly decoding: DecodingConfig;
  caption(image: Buffer, sample: RawSample): Promise<string>;
}

export function toStoreLabel(label: RawSample['label']): StoreLabel {
  if (label === 'Real') return 0;
  if (label === 'Fake') return 1;
  return -1;
}
