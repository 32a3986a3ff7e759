"""Synthetic dual-encoder datasets with known ground truth.

Geometry: every sample starts from an image direction u drawn uniformly on
the unit sphere. The text embedding is a noised copy of u, with a small
noise scale for real pairs and a larger one for fake pairs, so real pairs
sit closer in embedding space while fake pairs remain correlated hard
negatives rather than independent directions. The generated-caption
embedding is another noised copy of u with its own scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import consensus
from .rng import Rng, derive_seed
from .store import EmbeddingStore, LABEL_FAKE, LABEL_REAL


@dataclass
class SynthParams:
    n_real: int
    n_fake: int
    dim: int
    sigma_real: float
    sigma_fake: float
    sigma_gen: float
    seed: int

    def validate(self) -> None:
        if self.n_real < 0 or self.n_fake < 0:
            raise ValueError("sample counts must be non-negative")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if not 0.0 < self.sigma_real < self.sigma_fake:
            raise ValueError("need 0 < sigma_real < sigma_fake")
        if self.sigma_gen <= 0.0:
            raise ValueError("sigma_gen must be positive")


def _unit_rows(X: np.ndarray) -> np.ndarray:
    return X / np.sqrt(np.sum(X * X, axis=1))[:, None]


def generate(params: SynthParams) -> EmbeddingStore:
    """Deterministic dataset: real rows first, then fake, ids 0..n-1."""
    params.validate()
    n = params.n_real + params.n_fake
    d = params.dim
    rng = Rng(derive_seed(params.seed, "synthgen"))
    labels = np.concatenate([
        np.full(params.n_real, LABEL_REAL, dtype=np.int8),
        np.full(params.n_fake, LABEL_FAKE, dtype=np.int8),
    ])
    if n == 0:
        return EmbeddingStore.build([], labels, np.zeros((0, d)),
                                    np.zeros((0, d)), np.zeros((0, d)))
    U = _unit_rows(rng.normal(n * d).reshape(n, d))
    sigma = np.where(labels == LABEL_REAL, params.sigma_real,
                     params.sigma_fake)[:, None]
    text = _unit_rows(U + sigma * rng.normal(n * d).reshape(n, d))
    gen = _unit_rows(U + params.sigma_gen * rng.normal(n * d).reshape(n, d))
    return EmbeddingStore.build(np.arange(n, dtype=np.uint64), labels,
                                U, text, gen)


def difficulty_stats(store: EmbeddingStore) -> dict:
    """Per-class score statistics plus a class-overlap estimate.

    Overlap is the fraction of fake samples whose image/text score exceeds
    the real-class mean, i.e. fakes that a real-mean threshold would pass.
    """
    labels = store.labels
    real = labels == LABEL_REAL
    fake = labels == LABEL_FAKE
    if not np.any(real):
        raise ValueError("no real samples")
    if not np.any(fake):
        raise ValueError("no fake samples")
    s_c = consensus.clip_score(store.image.astype(np.float64),
                               store.text.astype(np.float64))
    s_b = consensus.blip_score(store.text.astype(np.float64),
                               store.gen.astype(np.float64))
    out = {}
    for name, scores in (("s_clip", s_c), ("s_blip", s_b)):
        for cls, mask in (("real", real), ("fake", fake)):
            out[f"{name}_{cls}_mean"] = float(np.mean(scores[mask]))
            out[f"{name}_{cls}_std"] = float(np.std(scores[mask]))
    out["overlap"] = float(np.mean(s_c[fake] > out["s_clip_real_mean"]))
    return out
