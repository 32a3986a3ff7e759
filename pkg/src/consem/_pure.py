"""Pure NumPy implementations of the hot kernels.

This module is the reference backend: consem._fast must match
rng_fill_u64 bit for bit and train_step to round-off. Keep the two in
lock step.
"""

import numpy as np

from . import model as mod

_MASK64 = (1 << 64) - 1


def rng_fill_u64(state: np.ndarray, n: int) -> np.ndarray:
    """Generate n xoshiro256** words, advancing `state` (uint64[4]) in place."""
    s0, s1, s2, s3 = (int(x) for x in state)
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        r = (s1 * 5) & _MASK64
        r = ((r << 7) | (r >> 57)) & _MASK64
        out[i] = (r * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return out


def train_step(model, V, T, labels, drop_u, lam, include_cc, grads):
    """One training-mode forward/backward on a batch, accumulating into grads.

    Returns (bce loss, clustering loss); the clustering term is computed and
    back-propagated only when include_cc is set. Running BN statistics are
    updated in place as a side effect.
    """
    cache = mod.forward(model, V, T, train=True, drop_u=drop_u)
    dz = mod.bce_dz(cache, labels)
    dH = mod.contrastive_cluster_dH(cache, labels, lam) if include_cc else None
    g = mod.backward(model, cache, dz, dH)
    for name in mod.PARAM_NAMES:
        grads[name] += g[name]
    loss_ce = mod.loss_supervised(cache.y, labels)
    loss_cc = mod.loss_contrastive_cluster(cache.s, labels) if include_cc else 0.0
    return loss_ce, loss_cc
