# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Mirrors consem._pure exactly: rng_fill_u64 is bit-identical, train_step
agrees to round-off. Any change here must be made in _pure as well; the
backend test suite compares the two directly.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, log1p, sqrt
from libc.stdint cimport uint64_t

cnp.import_array()

cdef double BN_EPS = 1e-5
cdef double BN_MOMENTUM = 0.1
cdef double PROB_CLAMP = 1e-7


def rng_fill_u64(state, Py_ssize_t n):
    """Generate n xoshiro256** words, advancing `state` (uint64[4]) in place."""
    cdef uint64_t[:] st = state
    cdef uint64_t s0 = st[0], s1 = st[1], s2 = st[2], s3 = st[3]
    cdef uint64_t r, t
    out_arr = np.empty(n, dtype=np.uint64)
    cdef uint64_t[:] out = out_arr
    cdef Py_ssize_t i
    for i in range(n):
        r = s1 * <uint64_t>5
        r = (r << 7) | (r >> 57)
        out[i] = r * <uint64_t>9
        t = s1 << 17
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = (s3 << 45) | (s3 >> 19)
    st[0] = s0
    st[1] = s1
    st[2] = s2
    st[3] = s3
    return out_arr


cdef inline double _sigmoid(double z) nogil:
    cdef double ez
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    ez = exp(z)
    return ez / (1.0 + ez)


def train_step(model, V_in, T_in, labels_in, drop_u_in,
               double lam, bint include_cc, grads):
    """Fused training-mode forward/backward on one batch.

    Accumulates into the arrays of `grads`, updates the model's running BN
    statistics in place, and returns (bce loss, clustering loss). Semantics
    match consem._pure.train_step.
    """
    V_arr = np.ascontiguousarray(V_in, dtype=np.float64)
    T_arr = np.ascontiguousarray(T_in, dtype=np.float64)
    y_arr = np.ascontiguousarray(labels_in, dtype=np.float64)

    cdef double[:, ::1] V = V_arr
    cdef double[:, ::1] T = T_arr
    cdef double[::1] lab = y_arr
    cdef double[:, ::1] A = model.A
    cdef double[:, ::1] W1 = model.W1
    cdef double[::1] b1 = model.b1
    cdef double[::1] gamma = model.gamma
    cdef double[::1] beta = model.beta
    cdef double[::1] W2 = model.W2
    cdef double[::1] b2 = model.b2
    cdef double[::1] rmean = model.running_mean
    cdef double[::1] rvar = model.running_var
    cdef double[:, ::1] gA = grads["A"]
    cdef double[:, ::1] gW1 = grads["W1"]
    cdef double[::1] gb1 = grads["b1"]
    cdef double[::1] ggamma = grads["gamma"]
    cdef double[::1] gbeta = grads["beta"]
    cdef double[::1] gW2 = grads["W2"]
    cdef double[::1] gb2 = grads["b2"]

    cdef Py_ssize_t n = V.shape[0]
    cdef Py_ssize_t d = V.shape[1]
    cdef Py_ssize_t h = W1.shape[0]
    cdef double p = model.p_drop

    cdef double[::1] drop
    cdef bint use_drop = p > 0.0
    if use_drop:
        if drop_u_in is None:
            raise ValueError("training forward with p_drop > 0 needs dropout uniforms")
        drop = np.ascontiguousarray(drop_u_in, dtype=np.float64)

    scratch = {name: np.empty((n, size), dtype=np.float64)
               for name, size in (("U", d), ("H", d), ("X", d),
                                  ("Z1", h), ("Zhat", h), ("Dn", h),
                                  ("dQ", h), ("dZ1", h), ("dH", d))}
    cdef double[:, ::1] U = scratch["U"]
    cdef double[:, ::1] H = scratch["H"]
    cdef double[:, ::1] X = scratch["X"]
    cdef double[:, ::1] Z1 = scratch["Z1"]
    cdef double[:, ::1] Zhat = scratch["Zhat"]
    cdef double[:, ::1] Dn = scratch["Dn"]
    cdef double[:, ::1] dQ = scratch["dQ"]
    cdef double[:, ::1] dZ1 = scratch["dZ1"]
    cdef double[:, ::1] dH = scratch["dH"]
    mask_arr = np.zeros((n, h), dtype=np.uint8)
    cdef unsigned char[:, ::1] mask = mask_arr
    vec = {name: np.empty(size, dtype=np.float64)
           for name, size in (("norms", n), ("s", n), ("z", n), ("y_raw", n),
                              ("y", n), ("dz", n), ("inv", h),
                              ("sum1", h), ("sum2", h))}
    cdef double[::1] norms = vec["norms"]
    cdef double[::1] s = vec["s"]
    cdef double[::1] z = vec["z"]
    cdef double[::1] y_raw = vec["y_raw"]
    cdef double[::1] y = vec["y"]
    cdef double[::1] dz = vec["dz"]
    cdef double[::1] inv = vec["inv"]
    cdef double[::1] sum1 = vec["sum1"]
    cdef double[::1] sum2 = vec["sum2"]

    cdef Py_ssize_t i, j, k, q
    cdef double acc, norm, mu, var, keep_scale, st, raw, coeff, proj
    cdef double loss_ce = 0.0, loss_cc = 0.0
    keep_scale = 1.0 / (1.0 - p) if use_drop else 1.0

    # Adapter and pair feature.
    for i in range(n):
        acc = 0.0
        for j in range(d):
            norm = 0.0
            for k in range(d):
                norm += A[j, k] * V[i, k]
            U[i, j] = norm
        norm = 0.0
        for j in range(d):
            norm += U[i, j] * U[i, j]
        norm = sqrt(norm)
        if norm < 1e-12:
            raise FloatingPointError("adapter collapsed an embedding to zero")
        norms[i] = norm
        acc = 0.0
        for j in range(d):
            H[i, j] = U[i, j] / norm
            X[i, j] = H[i, j] * T[i, j]
            acc += H[i, j] * T[i, j]
        s[i] = acc

    # First linear layer.
    for i in range(n):
        for q in range(h):
            acc = b1[q]
            for k in range(d):
                acc += W1[q, k] * X[i, k]
            Z1[i, q] = acc

    # Batch norm over the batch axis, running stats updated in place.
    for q in range(h):
        mu = 0.0
        for i in range(n):
            mu += Z1[i, q]
        mu /= n
        var = 0.0
        for i in range(n):
            var += (Z1[i, q] - mu) * (Z1[i, q] - mu)
        var /= n
        inv[q] = 1.0 / sqrt(var + BN_EPS)
        for i in range(n):
            Zhat[i, q] = (Z1[i, q] - mu) * inv[q]
        rmean[q] = (1.0 - BN_MOMENTUM) * rmean[q] + BN_MOMENTUM * mu
        if n > 1:
            var = var * n / (n - 1)
        rvar[q] = (1.0 - BN_MOMENTUM) * rvar[q] + BN_MOMENTUM * var

    # Affine, relu, dropout, output layer.
    for i in range(n):
        acc = b2[0]
        for q in range(h):
            raw = gamma[q] * Zhat[i, q] + beta[q]
            if raw < 0.0:
                raw = 0.0
            if use_drop:
                if drop[i * h + q] >= p:
                    mask[i, q] = 1
                    Dn[i, q] = raw * keep_scale
                else:
                    Dn[i, q] = 0.0
            else:
                mask[i, q] = 1
                Dn[i, q] = raw
            acc += W2[q] * Dn[i, q]
        z[i] = acc
        y_raw[i] = _sigmoid(acc)
        y[i] = y_raw[i]
        if y[i] < PROB_CLAMP:
            y[i] = PROB_CLAMP
        elif y[i] > 1.0 - PROB_CLAMP:
            y[i] = 1.0 - PROB_CLAMP

    # Losses (means over this batch).
    for i in range(n):
        loss_ce -= lab[i] * log(y[i]) + (1.0 - lab[i]) * log1p(-y[i])
    loss_ce /= n
    if include_cc:
        for i in range(n):
            raw = (1.0 + s[i]) / 2.0
            st = raw
            if st < PROB_CLAMP:
                st = PROB_CLAMP
            elif st > 1.0 - PROB_CLAMP:
                st = 1.0 - PROB_CLAMP
            loss_cc -= lab[i] * log1p(-st) + (1.0 - lab[i]) * log(st)
        loss_cc /= n

    # Backward: output layer.
    for i in range(n):
        if PROB_CLAMP < y_raw[i] < 1.0 - PROB_CLAMP:
            dz[i] = (y_raw[i] - lab[i]) / n
        else:
            dz[i] = 0.0
        gb2[0] += dz[i]
    for q in range(h):
        acc = 0.0
        for i in range(n):
            acc += Dn[i, q] * dz[i]
        gW2[q] += acc

    # Through dropout, relu, and the BN affine params.
    for i in range(n):
        for q in range(h):
            acc = dz[i] * W2[q]
            if use_drop:
                acc = acc * mask[i, q] * keep_scale
            if gamma[q] * Zhat[i, q] + beta[q] <= 0.0:
                acc = 0.0
            dQ[i, q] = acc
    for q in range(h):
        sum1[q] = 0.0
        sum2[q] = 0.0
        for i in range(n):
            ggamma[q] += dQ[i, q] * Zhat[i, q]
            gbeta[q] += dQ[i, q]
            sum1[q] += dQ[i, q] * gamma[q]
            sum2[q] += dQ[i, q] * gamma[q] * Zhat[i, q]

    # BN backward with batch statistics in the graph.
    for i in range(n):
        for q in range(h):
            dZ1[i, q] = (inv[q] / n) * (n * dQ[i, q] * gamma[q]
                                        - sum1[q] - Zhat[i, q] * sum2[q])

    # First layer and pair feature.
    for q in range(h):
        acc = 0.0
        for i in range(n):
            acc += dZ1[i, q]
        gb1[q] += acc
        for k in range(d):
            acc = 0.0
            for i in range(n):
                acc += dZ1[i, q] * X[i, k]
            gW1[q, k] += acc
    for i in range(n):
        for k in range(d):
            acc = 0.0
            for q in range(h):
                acc += dZ1[i, q] * W1[q, k]
            dH[i, k] = acc * T[i, k]

    # Clustering loss contributes straight to the adapted embedding.
    if include_cc:
        for i in range(n):
            raw = (1.0 + s[i]) / 2.0
            if PROB_CLAMP < raw < 1.0 - PROB_CLAMP:
                coeff = (lab[i] / (1.0 - raw) - (1.0 - lab[i]) / raw) / 2.0
                coeff *= lam / n
                for k in range(d):
                    dH[i, k] += coeff * T[i, k]

    # Renormalization backward, then the adapter.
    for i in range(n):
        proj = 0.0
        for k in range(d):
            proj += H[i, k] * dH[i, k]
        for k in range(d):
            dH[i, k] = (dH[i, k] - H[i, k] * proj) / norms[i]
    for j in range(d):
        for k in range(d):
            acc = 0.0
            for i in range(n):
                acc += dH[i, j] * V[i, k]
            gA[j, k] += acc

    return loss_ce, loss_cc
