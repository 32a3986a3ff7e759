"""Adapter + scoring head with hand-written forward and backward passes.

The trainable pieces are a square adapter on the image embedding and a two
layer head on the elementwise product of adapted image and text embeddings:

    h_I = normalize(A v)                      adapter, initialized to identity
    x   = h_I * h_T                           fused pair feature
    z   = W2 relu(BN(W1 x + b1)) + b2         with inverted dropout after relu
    y   = sigmoid(z)                          probability that the pair is fake

Label encoding is y = 1 for fake, y = 0 for real. Batch norm follows the
usual convention: batch statistics in training with running buffers updated
by momentum 0.1, frozen running statistics in eval. Gradients are derived by
hand and checked against finite differences in the test suite, so every
formula here is load-bearing; keep forward and backward in sync when
changing either.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PROB_CLAMP = 1e-7
IGNORE = -1  # pseudo-label value excluded from every loss

PARAM_NAMES = ("A", "W1", "b1", "gamma", "beta", "W2", "b2")
# Checkpoint block order; running stats sit between the affine groups.
CHECKPOINT_FIELDS = ("A", "W1", "b1", "gamma", "beta",
                     "running_mean", "running_var", "W2", "b2")


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class Model:
    """Parameters and batch-norm buffers. Arrays are float64 throughout."""

    A: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    W2: np.ndarray
    b2: np.ndarray  # shape (1,) so it is mutable in place like the rest
    running_mean: np.ndarray
    running_var: np.ndarray
    p_drop: float = 0.5

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @classmethod
    def init(cls, dim: int, hidden: int, rng, p_drop: float = 0.5) -> "Model":
        """Fresh model: identity adapter, scaled-gaussian head, unit BN."""
        if not 0.0 <= p_drop < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        A = np.eye(dim, dtype=np.float64)
        W1 = rng.normal(hidden * dim).reshape(hidden, dim) / np.sqrt(dim)
        W2 = rng.normal(hidden) / np.sqrt(hidden)
        return cls(
            A=A,
            W1=W1,
            b1=np.zeros(hidden),
            gamma=np.ones(hidden),
            beta=np.zeros(hidden),
            W2=W2,
            b2=np.zeros(1),
            running_mean=np.zeros(hidden),
            running_var=np.ones(hidden),
            p_drop=p_drop,
        )

    def params(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "Model":
        arrays = {name: getattr(self, name).copy() for name in CHECKPOINT_FIELDS}
        return Model(p_drop=self.p_drop, **arrays)


def adapt_image(A: np.ndarray, image_emb: np.ndarray) -> np.ndarray:
    """normalize(A v) for one vector or a batch of row vectors."""
    single = image_emb.ndim == 1
    V = np.atleast_2d(image_emb)
    if V.shape[1] != A.shape[1]:
        raise ValueError("adapter and embedding dimensions disagree")
    U = V @ A.T
    norms = np.sqrt(np.sum(U * U, axis=1))
    if np.any(norms < 1e-12):
        raise FloatingPointError("adapter collapsed an embedding to zero")
    H = U / norms[:, None]
    return H[0] if single else H


@dataclass
class ForwardCache:
    """Everything backward() needs, captured during forward()."""

    train: bool
    p: float
    V: np.ndarray
    T: np.ndarray
    norms: np.ndarray
    H: np.ndarray          # adapted, renormalized image embeddings
    X: np.ndarray
    inv: np.ndarray        # 1/sqrt(var + eps); batch or running var by mode
    Zhat: np.ndarray
    Q: np.ndarray
    mask: np.ndarray | None
    Dn: np.ndarray         # post-dropout activations feeding the last layer
    z: np.ndarray
    y_raw: np.ndarray
    y: np.ndarray          # clamped to [PROB_CLAMP, 1 - PROB_CLAMP]
    s: np.ndarray = field(default=None)  # adapted cosine <h_I, h_T>


def _head_core(model: Model, H, T, train: bool, drop_u, update_stats: bool):
    """Shared head computation on already-adapted embeddings."""
    n = H.shape[0]
    p = model.p_drop
    X = H * T
    Z1 = X @ model.W1.T + model.b1

    if train:
        mu = Z1.mean(axis=0)
        var = Z1.var(axis=0)  # biased, matches the normalization below
        inv = 1.0 / np.sqrt(var + BN_EPS)
        Zhat = (Z1 - mu) * inv
        if update_stats:
            m = BN_MOMENTUM
            # Running variance stores the unbiased estimate when possible.
            var_r = var * (n / (n - 1)) if n > 1 else var
            model.running_mean *= 1.0 - m
            model.running_mean += m * mu
            model.running_var *= 1.0 - m
            model.running_var += m * var_r
    else:
        inv = 1.0 / np.sqrt(model.running_var + BN_EPS)
        Zhat = (Z1 - model.running_mean) * inv

    Q = model.gamma * Zhat + model.beta
    R = np.maximum(Q, 0.0)

    if train and p > 0.0:
        if drop_u is None:
            raise ValueError("training forward with p_drop > 0 needs dropout uniforms")
        mask = (np.asarray(drop_u).reshape(n, model.hidden) >= p)
        Dn = R * mask / (1.0 - p)
    else:
        mask = None
        Dn = R

    z = Dn @ model.W2 + model.b2[0]
    y_raw = sigmoid(z)
    y = np.clip(y_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return X, inv, Zhat, Q, mask, Dn, z, y_raw, y


def forward(model: Model, V, T, *, train: bool, drop_u=None,
            update_stats: bool = True) -> ForwardCache:
    """Run adapter and head on a batch of image/text embedding rows.

    In training mode `drop_u` must hold n*hidden uniforms in [0, 1); a unit
    is kept when its uniform is >= p_drop. Eval mode uses running statistics
    and no dropout. `update_stats` lets a training-mode pass leave the
    running buffers untouched (probing a batch without learning from it).
    """
    U = V @ model.A.T
    norms = np.sqrt(np.sum(U * U, axis=1))
    if np.any(norms < 1e-12):
        raise FloatingPointError("adapter collapsed an embedding to zero")
    H = U / norms[:, None]
    X, inv, Zhat, Q, mask, Dn, z, y_raw, y = _head_core(
        model, H, T, train, drop_u, update_stats)
    s = np.sum(H * T, axis=1)
    return ForwardCache(train=train, p=model.p_drop, V=V, T=T, norms=norms,
                        H=H, X=X, inv=inv, Zhat=Zhat, Q=Q, mask=mask, Dn=Dn,
                        z=z, y_raw=y_raw, y=y, s=s)


def head_forward(model: Model, image_emb, text_emb, mode: str = "eval",
                 rng=None, update_stats: bool = False) -> np.ndarray:
    """Head-only prediction on already-adapted embeddings.

    Returns clamped y_hat per row; `rng` supplies dropout uniforms in train
    mode. Running statistics stay frozen unless update_stats is set.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    H = np.atleast_2d(np.asarray(image_emb, dtype=np.float64))
    T = np.atleast_2d(np.asarray(text_emb, dtype=np.float64))
    if H.shape != T.shape or H.shape[1] != model.dim:
        raise ValueError("embedding shapes do not match the model")
    train = mode == "train"
    drop_u = None
    if train and model.p_drop > 0.0:
        if rng is None:
            raise ValueError("train mode with dropout needs an rng")
        drop_u = rng.uniform(H.shape[0] * model.hidden)
    result = _head_core(model, H, T, train, drop_u, update_stats)
    return result[-1]


def backward(model: Model, cache: ForwardCache, dz, dH_extra=None) -> dict:
    """Gradients of a scalar loss given dL/dz and optionally dL/dH.

    `dz` is the per-sample derivative with respect to the pre-sigmoid logit;
    `dH_extra` injects a loss term that acts directly on the adapted
    embedding (the consensus calibration loss does). Returns a dict keyed
    like PARAM_NAMES.
    """
    n = cache.V.shape[0]
    gW2 = cache.Dn.T @ dz
    gb2 = np.array([np.sum(dz)])
    dDn = np.outer(dz, model.W2)
    if cache.mask is not None:
        dR = dDn * cache.mask / (1.0 - cache.p)
    else:
        dR = dDn
    dQ = dR * (cache.Q > 0.0)
    ggamma = np.sum(dQ * cache.Zhat, axis=0)
    gbeta = np.sum(dQ, axis=0)
    dZhat = dQ * model.gamma

    if cache.train:
        # Batch statistics participate in the graph.
        dZ1 = (cache.inv / n) * (
            n * dZhat
            - np.sum(dZhat, axis=0)
            - cache.Zhat * np.sum(dZhat * cache.Zhat, axis=0)
        )
    else:
        dZ1 = dZhat * cache.inv

    gW1 = dZ1.T @ cache.X
    gb1 = np.sum(dZ1, axis=0)
    dX = dZ1 @ model.W1
    dH = dX * cache.T
    if dH_extra is not None:
        dH = dH + dH_extra
    # Through the renormalization: project out the radial component.
    dU = (dH - cache.H * np.sum(cache.H * dH, axis=1, keepdims=True)) / cache.norms[:, None]
    gA = dU.T @ cache.V
    return {"A": gA, "W1": gW1, "b1": gb1, "gamma": ggamma,
            "beta": gbeta, "W2": gW2, "b2": gb2}


def loss_supervised(y_hat: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross entropy; y_hat must already be clamped."""
    if len(y_hat) == 0:
        raise ValueError("supervised loss needs a nonempty batch")
    return float(-np.mean(labels * np.log(y_hat)
                          + (1.0 - labels) * np.log1p(-y_hat)))


def bce_dz(cache: ForwardCache, labels: np.ndarray) -> np.ndarray:
    """d(mean BCE)/dz. Zero where the output sat on the clamp boundary."""
    n = len(labels)
    live = (cache.y_raw > PROB_CLAMP) & (cache.y_raw < 1.0 - PROB_CLAMP)
    return np.where(live, (cache.y_raw - labels) / n, 0.0)


def loss_contrastive_cluster(s: np.ndarray, labels: np.ndarray) -> float:
    """Clustering loss pushing real pairs toward high and fake pairs toward
    low adapted cosine. s is mapped to (0, 1) via (1 + s) / 2 and clamped."""
    if len(s) == 0:
        raise ValueError("clustering loss needs a nonempty batch")
    st = np.clip((1.0 + s) / 2.0, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(labels * np.log1p(-st) + (1.0 - labels) * np.log(st)))


def contrastive_cluster_dH(cache: ForwardCache, labels: np.ndarray,
                           lam: float) -> np.ndarray:
    """dL/dH for lam * loss_contrastive_cluster; flows only through h_I."""
    n = len(labels)
    raw = (1.0 + cache.s) / 2.0
    st = np.clip(raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    live = (raw > PROB_CLAMP) & (raw < 1.0 - PROB_CLAMP)
    coeff = np.where(live, (labels / (1.0 - st) - (1.0 - labels) / st) / 2.0, 0.0)
    return (lam / n) * coeff[:, None] * cache.T


def loss_unsupervised(y_hat: np.ndarray, pseudo_labels: np.ndarray) -> tuple[float, int]:
    """BCE against pseudo-labels, mean over accepted entries only.

    Entries labeled IGNORE are excluded. Returns (loss, accepted count);
    the loss is 0.0 when nothing was accepted.
    """
    pl = np.asarray(pseudo_labels)
    accepted = pl != IGNORE
    count = int(np.sum(accepted))
    if count == 0:
        return 0.0, 0
    y = y_hat[accepted]
    t = pl[accepted].astype(np.float64)
    loss = float(-np.mean(t * np.log(y) + (1.0 - t) * np.log1p(-y)))
    return loss, count


@dataclass
class LossBreakdown:
    l_sup: float
    l_cc: float
    l_unsup: float
    lam: float
    total: float

    def to_dict(self) -> dict:
        return {"l_sup": self.l_sup, "l_cc": self.l_cc,
                "l_unsup": self.l_unsup, "lambda": self.lam,
                "total": self.total}


def total_loss(l_sup: float, l_cc: float, l_unsup: float, lam: float) -> LossBreakdown:
    """Weighted sum of the three objectives."""
    for part in (l_sup, l_cc, l_unsup, lam):
        if not math.isfinite(part):
            raise ValueError("loss parts must be finite")
    return LossBreakdown(l_sup=l_sup, l_cc=l_cc, l_unsup=l_unsup, lam=lam,
                         total=l_sup + l_unsup + lam * l_cc)


class Adam:
    """Standard Adam with bias correction, one slot pair per parameter."""

    def __init__(self, model: Model, lr: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in model.params().items()}
        self.v = {k: np.zeros_like(v) for k, v in model.params().items()}

    def step(self, model: Model, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name in PARAM_NAMES:
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            getattr(model, name)[...] -= self.lr * update


def adam_step(model: Model, grads: dict, state: Adam, lr: float) -> tuple[Model, Adam]:
    """One optimizer step at the given learning rate; mutates in place."""
    state.lr = lr
    state.step(model, grads)
    return model, state


def lr_schedule(epoch: int, config) -> float:
    """Constant lr0 for the first warm_const_epochs, cosine decay after.

    `config` needs attributes epochs and lr0; warm_const_epochs (20) and
    lr_min (0.0) are read when present. The decay reaches lr_min exactly on
    the final epoch.
    """
    epochs = config.epochs
    lr0 = config.lr0
    warm = getattr(config, "warm_const_epochs", 20)
    lr_min = getattr(config, "lr_min", 0.0)
    if not 0 <= epoch < epochs:
        raise ValueError(f"epoch {epoch} outside [0, {epochs})")
    if epoch < warm or epochs - 1 <= warm:
        return lr0
    span = epochs - 1 - warm
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * (epoch - warm) / span))


def save_checkpoint(model: Model, path, *, step: int = 0, extra: dict | None = None) -> None:
    """One JSON header line, then float64 little-endian parameter blocks."""
    header = {
        "dim": model.dim,
        "hidden": model.hidden,
        "p_drop": model.p_drop,
        "step": step,
        "fields": list(CHECKPOINT_FIELDS),
    }
    if extra:
        header["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for name in CHECKPOINT_FIELDS:
            fh.write(np.ascontiguousarray(getattr(model, name), dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[Model, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    dim, hidden = header["dim"], header["hidden"]
    shapes = {
        "A": (dim, dim), "W1": (hidden, dim), "b1": (hidden,),
        "gamma": (hidden,), "beta": (hidden,),
        "running_mean": (hidden,), "running_var": (hidden,),
        "W2": (hidden,), "b2": (1,),
    }
    arrays = {}
    offset = 0
    for name in CHECKPOINT_FIELDS:
        count = int(np.prod(shapes[name]))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        arrays[name] = arr.reshape(shapes[name]).copy()
        offset += count * 8
    if offset != len(blob):
        raise ValueError("checkpoint payload size does not match its header")
    return Model(p_drop=header.get("p_drop", 0.5), **arrays), header
