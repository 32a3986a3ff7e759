export { parseRawSamples, ParsedSamples } from './jsonl';
export { IdentityCaptioner, MockEncoder, l2normalize } from './models';
export { ExtractLogger, ExtractResult, extractSamples } from './pipeline';
export { DecodedStore, FLAG_HAS_GEN, HEADER_SIZE, MAGIC, NORM_TOLERANCE,
         SplitManifest, VERSION, buildManifest, decodeStore, encodeStore,
         readStoreFile, recordSize, writeStoreFile } from './store';
export { Captioner, DecodingConfig, Encoder, LineError, RawSample,
         SkippedSample, StoreLabel, StoreRecord, toStoreLabel } from './types';
