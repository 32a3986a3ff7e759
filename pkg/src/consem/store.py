"""Persistence and split management for embedding datasets.

Store layout (all little endian):

    header, 24 bytes: magic b"CVLM" | version u32 (=1) | dim u32
                      | count u64 | flags u32
    record, 16 + 12*dim bytes: id u64 | label i8 | 7 pad bytes
                      | image f32[dim] | text f32[dim] | gen f32[dim]

Labels are 0 (real), 1 (fake), -1 (unlabeled). Flag bit 0 says whether the
gen slots carry meaningful vectors; the slots are present either way so the
record stride depends only on dim. Pad bytes are written as zeros and loads
preserve whatever is on disk, so save(load(path)) reproduces the file byte
for byte.

Split manifests live next to the store as JSON: four id arrays under the
keys "train_labeled", "train_unlabeled", "val" and "test". Ground-truth
labels of train_unlabeled records stay in the store (the manifest is what
masks them), so pseudo-label precision can be measured without leaking
labels into training.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng, derive_seed

MAGIC = b"CVLM"
VERSION = 1
HEADER = struct.Struct("<4sIIQI")
FLAG_HAS_GEN = 1

LABEL_REAL = 0
LABEL_FAKE = 1
LABEL_UNLABELED = -1

# Rows whose norm is already this close to 1 are left untouched, which makes
# renormalization idempotent across repeated load/save cycles.
NORM_SNAP = 1e-6


class StoreFormatError(ValueError):
    """Raised when a file does not parse as a valid embedding store."""


def record_dtype(dim: int) -> np.dtype:
    return np.dtype([
        ("id", "<u8"),
        ("label", "<i1"),
        ("pad", "V7"),
        ("image", "<f4", (dim,)),
        ("text", "<f4", (dim,)),
        ("gen", "<f4", (dim,)),
    ])


@dataclass
class Record:
    id: int
    label: int
    image: np.ndarray
    text: np.ndarray
    gen: np.ndarray


def _normalize_rows(raw: np.ndarray) -> np.ndarray:
    """Unit-normalize float rows, skipping rows already within NORM_SNAP."""
    out = np.asarray(raw, dtype=np.float64).copy()
    norms = np.sqrt(np.sum(out * out, axis=1))
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero embedding row")
    drifted = np.abs(norms - 1.0) > NORM_SNAP
    out[drifted] /= norms[drifted, None]
    result = np.asarray(raw, dtype=np.float32).copy()
    result[drifted] = out[drifted].astype(np.float32)
    return result


class EmbeddingStore:
    """In-memory view of one store file, backed by a structured array."""

    def __init__(self, data: np.ndarray, dim: int, flags: int = FLAG_HAS_GEN):
        if data.dtype != record_dtype(dim):
            raise ValueError("data dtype does not match dim")
        self.data = data
        self.dim = dim
        self.flags = flags

    def __len__(self) -> int:
        return len(self.data)

    @property
    def has_gen(self) -> bool:
        return bool(self.flags & FLAG_HAS_GEN)

    @property
    def ids(self) -> np.ndarray:
        return self.data["id"]

    @property
    def labels(self) -> np.ndarray:
        return self.data["label"]

    @property
    def image(self) -> np.ndarray:
        return self.data["image"]

    @property
    def text(self) -> np.ndarray:
        return self.data["text"]

    @property
    def gen(self) -> np.ndarray:
        return self.data["gen"]

    def record(self, i: int) -> Record:
        row = self.data[i]
        return Record(int(row["id"]), int(row["label"]),
                      row["image"].copy(), row["text"].copy(), row["gen"].copy())

    def subset(self, index) -> "EmbeddingStore":
        return EmbeddingStore(self.data[index].copy(), self.dim, self.flags)

    @classmethod
    def build(cls, ids, labels, image, text, gen=None, *,
              normalize: bool = True) -> "EmbeddingStore":
        """Pack arrays into a store, unit-normalizing each embedding row."""
        image = np.atleast_2d(image)
        n, dim = image.shape
        data = np.zeros(n, dtype=record_dtype(dim))
        data["id"] = np.asarray(ids, dtype=np.uint64)
        lab = np.asarray(labels, dtype=np.int8)
        bad = ~np.isin(lab, (LABEL_REAL, LABEL_FAKE, LABEL_UNLABELED))
        if np.any(bad):
            raise ValueError(f"invalid label value: {lab[bad][0]}")
        data["label"] = lab
        flags = 0
        fix = _normalize_rows if normalize else lambda a: np.asarray(a, dtype=np.float32)
        data["image"] = fix(image)
        data["text"] = fix(np.atleast_2d(text))
        if gen is not None:
            data["gen"] = fix(np.atleast_2d(gen))
            flags |= FLAG_HAS_GEN
        return cls(data, dim, flags)

    def save(self, path) -> None:
        header = HEADER.pack(MAGIC, VERSION, self.dim, len(self.data), self.flags)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.data.tobytes())

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < HEADER.size:
            raise StoreFormatError("file shorter than the 24-byte header")
        magic, version, dim, count, flags = HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise StoreFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise StoreFormatError(f"unsupported version {version}")
        if dim == 0:
            raise StoreFormatError("dim must be positive")
        dtype = record_dtype(dim)
        expected = HEADER.size + count * dtype.itemsize
        if len(blob) != expected:
            raise StoreFormatError(
                f"size mismatch: header promises {expected} bytes, file has {len(blob)}")
        data = np.frombuffer(blob[HEADER.size:], dtype=dtype).copy()
        lab = data["label"]
        bad = ~np.isin(lab, (LABEL_REAL, LABEL_FAKE, LABEL_UNLABELED))
        if np.any(bad):
            raise StoreFormatError(f"invalid label value: {lab[bad][0]}")
        return cls(data, dim, flags)

    def renormalized(self) -> "EmbeddingStore":
        """Copy with every embedding row snapped back to unit norm."""
        data = self.data.copy()
        data["image"] = _normalize_rows(data["image"])
        data["text"] = _normalize_rows(data["text"])
        if self.has_gen:
            data["gen"] = _normalize_rows(data["gen"])
        return EmbeddingStore(data, self.dim, self.flags)

    def norm_stats(self) -> dict:
        """Worst-case deviation from unit norm per embedding family."""
        out = {}
        fields = ["image", "text"] + (["gen"] if self.has_gen else [])
        for name in fields:
            v = self.data[name].astype(np.float64)
            if len(v) == 0:
                out[name] = 0.0
            else:
                norms = np.sqrt(np.sum(v * v, axis=1))
                out[name] = float(np.max(np.abs(norms - 1.0)))
        return out


def write_store(records, path, *, normalize: bool = True, dim: int = 1) -> int:
    """Write Record objects (or a whole store) to disk; returns bytes written.

    Embeddings are unit-normalized here, at write time, so readers never
    re-normalize; rows already within NORM_SNAP of unit length are kept
    bit-identical, which makes rewriting a loaded store a no-op. `dim` is
    consulted only when `records` is empty.
    """
    if isinstance(records, EmbeddingStore):
        st = records
    else:
        records = list(records)
        if records:
            dim = len(records[0].image)
            for r in records:
                if not len(r.image) == len(r.text) == len(r.gen) == dim:
                    raise ValueError("records disagree on embedding dimension")
            ids = [r.id for r in records]
            if len(set(ids)) != len(ids):
                raise ValueError("duplicate sample id")
            st = EmbeddingStore.build(
                ids, [r.label for r in records],
                np.stack([r.image for r in records]),
                np.stack([r.text for r in records]),
                np.stack([r.gen for r in records]),
                normalize=normalize)
        else:
            st = EmbeddingStore(np.zeros(0, dtype=record_dtype(dim)), dim, FLAG_HAS_GEN)
    st.save(path)
    return HEADER.size + len(st.data) * st.data.dtype.itemsize


def read_store(path) -> EmbeddingStore:
    """Load a store exactly as written; no normalization is re-applied."""
    return EmbeddingStore.load(path)


@dataclass
class SplitManifest:
    """Id lists partitioning a store into the four experiment roles."""

    train_labeled: list = field(default_factory=list)
    train_unlabeled: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"train_labeled": list(self.train_labeled),
                "train_unlabeled": list(self.train_unlabeled),
                "val": list(self.val), "test": list(self.test)}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SplitManifest":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(**{k: list(raw[k]) for k in
                      ("train_labeled", "train_unlabeled", "val", "test")})

    def validate(self, store: EmbeddingStore) -> None:
        """Check disjointness, id existence, and label visibility rules."""
        groups = [self.train_labeled, self.train_unlabeled, self.val, self.test]
        names = ["train_labeled", "train_unlabeled", "val", "test"]
        seen: dict = {}
        for name, ids in zip(names, groups):
            for i in ids:
                if i in seen:
                    raise ValueError(f"id {i} appears in both {seen[i]} and {name}")
                seen[i] = name
        by_id = {int(i): int(l) for i, l in zip(store.ids, store.labels)}
        for i in seen:
            if int(i) not in by_id:
                raise ValueError(f"manifest id {i} not present in the store")
        for name in ("train_labeled", "val", "test"):
            for i in getattr(self, name):
                if by_id[int(i)] == LABEL_UNLABELED:
                    raise ValueError(f"{name} id {i} has no ground-truth label")
        lab = [by_id[int(i)] for i in self.train_labeled]
        if len(lab) < 2 or LABEL_REAL not in lab or LABEL_FAKE not in lab:
            raise ValueError("train_labeled needs >= 2 ids covering both classes")


def _stratified_take(ids_by_class: dict, fraction: float, rng: Rng,
                     minimum: int = 0) -> tuple[list, dict]:
    """Draw round(fraction * n) ids per class; returns (taken, remainder)."""
    taken = []
    rest = {}
    for label in sorted(ids_by_class):
        pool = list(ids_by_class[label])
        rng.shuffle(pool)
        k = int(round(fraction * len(pool)))
        k = max(k, min(minimum, len(pool)))
        taken.extend(pool[:k])
        rest[label] = pool[k:]
    return taken, rest


def build_manifest(store: EmbeddingStore, labeled_fraction: float, seed: int,
                   *, val_fraction: float = 0.1,
                   test_fraction: float = 0.1) -> SplitManifest:
    """Stratified split of a store into the four experiment roles.

    Records carrying a ground-truth label are split per class: val and test
    fractions are carved off first, then labeled_fraction of the remaining
    training pool (rounded to nearest, at least 1 per class) becomes
    train_labeled and the rest train_unlabeled. Records stored without a
    label can only ever be train_unlabeled.
    """
    if not 0.0 < labeled_fraction < 1.0:
        raise ValueError("labeled_fraction must lie in (0, 1)")
    for name, frac in (("val_fraction", val_fraction), ("test_fraction", test_fraction)):
        if not 0.0 <= frac < 1.0:
            raise ValueError(f"{name} must lie in [0, 1)")

    labels = store.labels
    ids = store.ids
    by_class = {}
    for lab in (LABEL_REAL, LABEL_FAKE):
        members = [int(i) for i in ids[labels == lab]]
        if not members:
            raise ValueError(f"store has no records of class {lab}")
        by_class[lab] = members
    always_unlabeled = [int(i) for i in ids[labels == LABEL_UNLABELED]]

    rng = Rng(derive_seed(seed, "manifest"))
    val, rest = _stratified_take(by_class, val_fraction, rng)
    test, rest = _stratified_take(rest, test_fraction / (1.0 - val_fraction)
                                  if val_fraction < 1.0 else 0.0, rng)
    labeled, rest = _stratified_take(rest, labeled_fraction, rng, minimum=1)
    unlabeled = [i for pool in rest.values() for i in pool] + always_unlabeled
    rng.shuffle(unlabeled)
    manifest = SplitManifest(train_labeled=labeled, train_unlabeled=unlabeled,
                             val=val, test=test)
    manifest.validate(store)
    return manifest


def apply_imbalance(ids, labels, ratio_real_to_fake: tuple, seed: int) -> list:
    """Subsample ids to an exact real:fake class ratio.

    Takes the largest subset realizing the ratio exactly: with ratio (r, f)
    and class pools of sizes n_r, n_f, the result has k*r real and k*f fake
    ids for k = min(n_r // r, n_f // f). Raises when either class cannot
    contribute even one ratio unit.
    """
    r_real, r_fake = ratio_real_to_fake
    if r_real < 1 or r_fake < 1:
        raise ValueError("ratio parts must be positive integers")
    labels = np.asarray(labels)
    ids = list(ids)
    real = [i for i, l in zip(ids, labels) if l == LABEL_REAL]
    fake = [i for i, l in zip(ids, labels) if l == LABEL_FAKE]
    k = min(len(real) // r_real, len(fake) // r_fake)
    if k == 0:
        raise ValueError("not enough samples of each class to realize the ratio")
    rng = Rng(derive_seed(seed, "imbalance"))
    rng.shuffle(real)
    rng.shuffle(fake)
    out = real[:k * r_real] + fake[:k * r_fake]
    rng.shuffle(out)
    return out


def subsample_unlabeled(unlabeled_ids, multiplier: float, n_labeled: int,
                        seed: int) -> list:
    """Pick exactly round(multiplier * n_labeled) unlabeled ids.

    A request larger than the pool is an error rather than a silent cap.
    """
    if multiplier < 0:
        raise ValueError("multiplier must be non-negative")
    want = int(round(multiplier * n_labeled))
    pool = list(unlabeled_ids)
    if want > len(pool):
        raise ValueError(f"requested {want} unlabeled ids, pool has {len(pool)}")
    rng = Rng(derive_seed(seed, "subsample"))
    rng.shuffle(pool)
    return pool[:want]
