"""Semi-supervised consensus training engine for dual-encoder embedding records."""

__version__ = "0.1.0"

from .store import EmbeddingStore, Record  # noqa: F401
from .consensus import PseudoLabel, ThresholdSet  # noqa: F401
