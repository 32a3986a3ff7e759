"""Consensus scores, threshold estimation, and pseudo-label assignment.

Two agreement scores drive everything: clip_score compares the (adapted)
image embedding against the text embedding, blip_score compares the text
embedding against the generated-caption embedding. Class-mean thresholds
estimated on labeled data turn the two scores into a three-way decision:
both scores below the fake means -> Fake, both above the real means ->
Real, anything else -> Ignore.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

LABEL_REAL = 0
LABEL_FAKE = 1


class PseudoLabel(enum.IntEnum):
    REAL = 0
    FAKE = 1
    IGNORE = -1


@dataclass
class ConsensusScores:
    s_clip: float
    s_blip: float


@dataclass
class ThresholdSet:
    tau_c_real: float
    tau_c_fake: float
    tau_b_real: float
    tau_b_fake: float

    @property
    def degenerate(self) -> bool:
        """True when a real-class mean does not exceed its fake-class mean."""
        return (self.tau_c_real <= self.tau_c_fake
                or self.tau_b_real <= self.tau_b_fake)

    def to_dict(self) -> dict:
        return {"tau_c_real": self.tau_c_real, "tau_c_fake": self.tau_c_fake,
                "tau_b_real": self.tau_b_real, "tau_b_fake": self.tau_b_fake}


def _inner(a, b) -> np.ndarray | float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite embedding input")
    out = np.sum(a * b, axis=-1)
    return float(out) if out.ndim == 0 else out


def clip_score(image_emb, text_emb):
    """Inner product of image and text embeddings (rows or single vectors)."""
    return _inner(image_emb, text_emb)


def blip_score(text_emb, gen_text_emb):
    """Inner product of text and generated-caption embeddings."""
    return _inner(text_emb, gen_text_emb)


def _class_mean(values, mask) -> float:
    """Arithmetic mean in input order with plain sequential accumulation."""
    total = 0.0
    count = 0
    for v, keep in zip(values, mask):
        if keep:
            total += float(v)
            count += 1
    if count == 0:
        raise ValueError("threshold estimation needs at least one sample per class")
    return total / count


def estimate_thresholds(s_clip, s_blip, labels) -> ThresholdSet:
    """Per-class score means over a labeled batch.

    labels use 0 = real, 1 = fake; both classes must be present. A
    degenerate result (real mean not above fake mean) is legal but
    suspicious, so it raises a RuntimeWarning rather than an error.
    """
    labels = np.asarray(labels)
    real = labels == LABEL_REAL
    fake = labels == LABEL_FAKE
    ts = ThresholdSet(
        tau_c_real=_class_mean(s_clip, real),
        tau_c_fake=_class_mean(s_clip, fake),
        tau_b_real=_class_mean(s_blip, real),
        tau_b_fake=_class_mean(s_blip, fake),
    )
    if ts.degenerate:
        warnings.warn("degenerate thresholds: a real-class mean does not "
                      "exceed its fake-class mean", RuntimeWarning)
    return ts


def assign_pseudo_label(scores: ConsensusScores, thresholds: ThresholdSet) -> PseudoLabel:
    """Three-way decision for one sample; ties fall through to Ignore.

    The fake branch is checked first, which settles the (degenerate) case
    where overlapping thresholds would let both branches fire.
    """
    if scores.s_clip < thresholds.tau_c_fake and scores.s_blip < thresholds.tau_b_fake:
        return PseudoLabel.FAKE
    if scores.s_clip > thresholds.tau_c_real and scores.s_blip > thresholds.tau_b_real:
        return PseudoLabel.REAL
    return PseudoLabel.IGNORE


def assign_pseudo_labels(s_clip: np.ndarray, s_blip: np.ndarray,
                         thresholds: ThresholdSet) -> np.ndarray:
    """Vectorized assign_pseudo_label; returns int8 array of PseudoLabel values."""
    s_clip = np.asarray(s_clip)
    s_blip = np.asarray(s_blip)
    out = np.full(s_clip.shape, int(PseudoLabel.IGNORE), dtype=np.int8)
    fake = (s_clip < thresholds.tau_c_fake) & (s_blip < thresholds.tau_b_fake)
    real = (s_clip > thresholds.tau_c_real) & (s_blip > thresholds.tau_b_real) & ~fake
    out[fake] = int(PseudoLabel.FAKE)
    out[real] = int(PseudoLabel.REAL)
    return out
