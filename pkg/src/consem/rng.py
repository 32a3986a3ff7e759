"""Deterministic pseudo-random streams shared by every sampling component.

The generator is xoshiro256** seeded through splitmix64, so a fixed seed
reproduces the same draws on every platform and in every implementation of
the same layout. Bulk u64 generation goes through the kernel backend
(compiled extension when built, pure Python otherwise); both produce
bit-identical streams. Everything else (uniforms, gaussians, bounded ints,
shuffles) is derived from that single u64 stream, so the sequence of method
calls fully determines every value drawn.
"""

from __future__ import annotations

import math

import numpy as np

from . import backend

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV_2_53 = 2.0 ** -53


def _splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (advanced state, output word)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D9D049BB133111) & _MASK64
    return state, z ^ (z >> 31)


def mix64(x: int) -> int:
    """splitmix64 finalizer; used to derive child seeds."""
    _, z = _splitmix64(x & _MASK64)
    return z


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def derive_seed(seed: int, *tags: object) -> int:
    """Derive an independent child seed from a master seed and string tags."""
    h = mix64(seed)
    for tag in tags:
        h = mix64(h ^ _fnv1a64(str(tag)))
    return h


class Rng:
    """Buffered xoshiro256** stream with splitmix64 seed expansion."""

    def __init__(self, seed: int, block_size: int = 4096):
        if block_size < 1:
            raise ValueError("block_size must be >= 1")
        state = []
        s = seed & _MASK64
        for _ in range(4):
            s, word = _splitmix64(s)
            state.append(word)
        if not any(state):  # xoshiro state must not be all zero
            state[0] = _GOLDEN
        self._state = np.array(state, dtype=np.uint64)
        self._block_size = block_size
        self._buffer = np.empty(0, dtype=np.uint64)
        self._cursor = 0
        self.seed = seed & _MASK64

    def u64(self, n: int) -> np.ndarray:
        """Next n raw 64-bit words from the stream."""
        if n < 0:
            raise ValueError("n must be >= 0")
        out = np.empty(n, dtype=np.uint64)
        filled = 0
        while filled < n:
            avail = len(self._buffer) - self._cursor
            if avail == 0:
                need = max(self._block_size, n - filled)
                self._buffer = backend.rng_fill_u64(self._state, need)
                self._cursor = 0
                avail = need
            take = min(avail, n - filled)
            out[filled:filled + take] = self._buffer[self._cursor:self._cursor + take]
            self._cursor += take
            filled += take
        return out

    def next_u64(self) -> int:
        if self._cursor >= len(self._buffer):
            self._buffer = backend.rng_fill_u64(self._state, self._block_size)
            self._cursor = 0
        value = int(self._buffer[self._cursor])
        self._cursor += 1
        return value

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1): top 53 bits of each word."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normal(self, n: int) -> np.ndarray:
        """n standard gaussians via Box-Muller on consecutive word pairs."""
        if n == 0:
            return np.empty(0, dtype=np.float64)
        pairs = (n + 1) // 2
        words = self.u64(2 * pairs)
        # u1 in (0, 1] so the log is finite; u2 in [0, 1).
        u1 = ((words[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (words[1::2] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection from the u64 stream."""
        if n <= 0:
            raise ValueError("n must be >= 1")
        if n == 1:
            return 0
        threshold = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < threshold:
                return x % n

    def shuffle(self, seq) -> None:
        """In-place Fisher-Yates shuffle of a list or 1-d array."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randbelow(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def permutation(self, n: int) -> np.ndarray:
        idx = np.arange(n, dtype=np.int64)
        self.shuffle(idx)
        return idx

    def spawn(self, *tags: object) -> "Rng":
        """Independent child stream keyed by this stream's seed and tags."""
        return Rng(derive_seed(self.seed, *tags), block_size=self._block_size)
