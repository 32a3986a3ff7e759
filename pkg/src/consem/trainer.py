"""Training orchestration: warm-up, per-epoch thresholds, pseudo-labeling,
the three-term loss, and deterministic run reports.

The same loop serves the consensus method and every baseline policy. All
policies consume identical batch sequences and learning-rate schedules for
a given seed (verified through the data-order digest in the report); they
differ only in how unlabeled samples are selected and labeled. Randomness
is split into independent child streams per concern (init, batch order,
dropout on each split) so that, for example, skipping the unlabeled pass
cannot shift the labeled-side dropout masks.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from . import backend, baselines, consensus
from . import model as mod
from .consensus import PseudoLabel, ThresholdSet
from .rng import Rng, derive_seed
from .store import (EmbeddingStore, LABEL_FAKE, LABEL_REAL, LABEL_UNLABELED,
                    SplitManifest)


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    lr0: float = 5e-4
    warmup_epochs: int = 5
    lam: float = 1.0
    threshold_refresh: str = "per_epoch"
    blip_score_mode: str = "text_gen"
    seed: int = 0
    store_path: str | None = None
    manifest_path: str | None = None
    out_dir: str | None = None
    policy: str = "consensus"
    fixed_tau: float = 0.95
    ema_decay: float = 0.999
    target_class_ratio: tuple | None = None
    hidden: int | None = None  # None -> embedding dimension
    p_drop: float = 0.5
    warm_const_epochs: int = 20
    lr_min: float = 0.0
    checkpoint_every: int = 0
    unmask_unlabeled: bool = False

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm)")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("need 0 <= warmup_epochs < epochs")
        if self.threshold_refresh not in ("per_epoch", "per_batch"):
            raise ValueError(f"unknown threshold_refresh {self.threshold_refresh!r}")
        if self.blip_score_mode not in ("text_gen", "image_gen"):
            raise ValueError(f"unknown blip_score_mode {self.blip_score_mode!r}")
        if self.policy not in baselines.POLICY_KINDS:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")

    def to_kwargs(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_dict(self) -> dict:
        out = self.to_kwargs()
        out["lambda"] = out.pop("lam")
        if out["target_class_ratio"] is not None:
            out["target_class_ratio"] = list(out["target_class_ratio"])
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        if raw.get("target_class_ratio") is not None:
            raw["target_class_ratio"] = tuple(raw["target_class_ratio"])
        return cls(**raw)


@dataclass
class Split:
    """Dense arrays for one manifest role, in manifest id order."""

    ids: np.ndarray
    V: np.ndarray
    T: np.ndarray
    G: np.ndarray
    y: np.ndarray  # ground truth; -1 where genuinely unknown

    def __len__(self) -> int:
        return len(self.ids)


def gather_split(store: EmbeddingStore, ids) -> Split:
    index = {int(i): k for k, i in enumerate(store.ids)}
    rows = np.array([index[int(i)] for i in ids], dtype=np.int64)
    return Split(
        ids=np.asarray(ids, dtype=np.uint64),
        V=store.image[rows].astype(np.float64),
        T=store.text[rows].astype(np.float64),
        G=store.gen[rows].astype(np.float64),
        y=store.labels[rows].astype(np.int64),
    )


class BatchCycler:
    """Endless labeled batches: reshuffle each pass, drop runts below 2."""

    def __init__(self, n: int, batch_size: int, rng: Rng):
        if n < 2:
            raise ValueError("labeled split needs at least 2 samples")
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self._queue: list = []

    def _refill(self) -> None:
        order = self.rng.permutation(self.n)
        for start in range(0, self.n, self.batch_size):
            chunk = order[start:start + self.batch_size]
            if len(chunk) >= 2:  # a singleton batch would break batch norm
                self._queue.append(chunk)

    def next(self) -> np.ndarray:
        if not self._queue:
            self._refill()
        return self._queue.pop(0)


class DataOrderDigest:
    """Running hash of every batch's sample ids, in execution order."""

    def __init__(self):
        self._h = hashlib.sha256()

    def update(self, phase: str, epoch: int, step: int,
               labeled_ids: np.ndarray, unlabeled_ids: np.ndarray) -> None:
        self._h.update(phase.encode())
        self._h.update(struct.pack("<qq", epoch, step))
        self._h.update(np.ascontiguousarray(labeled_ids, dtype="<u8").tobytes())
        self._h.update(b"|")
        self._h.update(np.ascontiguousarray(unlabeled_ids, dtype="<u8").tobytes())

    def hexdigest(self) -> str:
        return self._h.hexdigest()


def evaluate(model: mod.Model, V, T, labels) -> dict:
    """Eval-mode accuracy metrics; prediction is Fake iff y_hat > 0.5."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("cannot evaluate an empty split")
    cache = mod.forward(model, V, T, train=False)
    pred = (cache.y > 0.5).astype(np.int64)
    correct = pred == labels
    counts = {}
    recalls = []
    for name, cls in (("real", LABEL_REAL), ("fake", LABEL_FAKE)):
        m = labels == cls
        counts[f"n_{name}"] = int(np.sum(m))
        counts[f"correct_{name}"] = int(np.sum(correct & m))
        if counts[f"n_{name}"]:
            recalls.append(counts[f"correct_{name}"] / counts[f"n_{name}"])
    return {
        "accuracy": float(np.mean(correct)),
        "balanced_accuracy": float(np.mean(recalls)) if recalls else 0.0,
        **counts,
        "n": int(len(labels)),
    }


def pseudo_label_quality(assignments, truth) -> dict:
    """Coverage plus per-class precision/recall against masked ground truth.

    Entries with unknown truth (-1) count toward coverage but are excluded
    from precision/recall. Undefined ratios come back as None.
    """
    assignments = np.asarray(assignments)
    truth = np.asarray(truth)
    total = len(assignments)
    accepted = assignments != int(PseudoLabel.IGNORE)
    out = {
        "coverage": float(np.sum(accepted)) / total if total else 0.0,
        "accepted": int(np.sum(accepted)),
        "total": int(total),
    }
    known = truth != LABEL_UNLABELED
    for name, cls in (("real", LABEL_REAL), ("fake", LABEL_FAKE)):
        as_cls = accepted & (assignments == cls) & known
        hit = as_cls & (truth == cls)
        true_cls = known & (truth == cls)
        out[f"precision_{name}"] = (float(np.sum(hit)) / np.sum(as_cls)
                                    if np.sum(as_cls) else None)
        out[f"recall_{name}"] = (float(np.sum(hit)) / np.sum(true_cls)
                                 if np.sum(true_cls) else None)
    return out


@dataclass
class TrainState:
    """Mutable cross-epoch training machinery shared by fit()."""

    adam: mod.Adam
    cycler: BatchCycler
    rng_ul_order: Rng
    rng_drop_l: Rng
    rng_drop_ul: Rng
    digest: DataOrderDigest
    sb_labeled: np.ndarray | None = None    # constant in text_gen mode
    sb_unlabeled: np.ndarray | None = None
    fm_tau: float = 0.5                     # freematch running threshold
    last_thresholds: ThresholdSet | None = None
    quality_counts: dict = field(default_factory=dict)


def _zero_grads(model: mod.Model) -> dict:
    return {k: np.zeros_like(v) for k, v in model.params().items()}


def _scores_for(model, split: Split, rows, config: TrainConfig,
                sb_cache: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Consensus scores for the given rows under the current adapter."""
    H = mod.adapt_image(model.A, split.V[rows])
    sc = consensus.clip_score(H, split.T[rows])
    if config.blip_score_mode == "text_gen":
        sb = sb_cache[rows]
    else:
        sb = consensus.blip_score(H, split.G[rows])
    return np.atleast_1d(sc), np.atleast_1d(sb)


def _estimate_from_rows(model, labeled: Split, rows, config, state) -> ThresholdSet:
    sc, sb = _scores_for(model, labeled, rows, config, state.sb_labeled)
    return consensus.estimate_thresholds(sc, sb, labeled.y[rows])


def _select_pseudo(model, unlabeled: Split, rows, thresholds, config,
                   state: TrainState) -> np.ndarray | None:
    """Policy dispatch; returns pseudo-labels for the rows, or None (sup_only)."""
    if config.policy == "sup_only":
        return None
    if config.policy == "consensus":
        sc, sb = _scores_for(model, unlabeled, rows, config, state.sb_unlabeled)
        return consensus.assign_pseudo_labels(sc, sb, thresholds)
    y_hat = mod.forward(model, unlabeled.V[rows], unlabeled.T[rows], train=False).y
    if config.policy == "fixmatch":
        return baselines.fixmatch_select(y_hat, config.fixed_tau)
    if config.policy == "freematch_star":
        conf = np.maximum(y_hat, 1.0 - y_hat)
        state.fm_tau = baselines.freematch_update(state.fm_tau, conf, config.ema_decay)
        return baselines.fixmatch_select(y_hat, state.fm_tau)
    if config.policy == "adsh":
        conf = np.maximum(y_hat, 1.0 - y_hat)
        pred_real = y_hat < 0.5
        ratio = config.target_class_ratio or _labeled_ratio(state)
        try:
            tau_real, tau_fake = baselines.adsh_thresholds(
                conf[pred_real], conf[~pred_real], ratio, config.fixed_tau)
        except ValueError:
            # One predicted class is missing from this batch: the adaptive
            # rule is undefined, fall back to the fixed threshold.
            tau_real = tau_fake = config.fixed_tau
        return baselines.adsh_select(y_hat, tau_real, tau_fake)
    raise ValueError(f"unknown policy {config.policy!r}")


def _labeled_ratio(state: TrainState) -> tuple:
    return state.quality_counts.get("labeled_ratio", (1, 1))


def warmup(model: mod.Model, labeled: Split, warmup_epochs: int,
           config: TrainConfig, state: TrainState) -> mod.Model:
    """Supervised warm-up: BCE plus the weighted clustering loss, lr0."""
    classes = set(int(v) for v in labeled.y)
    if not {LABEL_REAL, LABEL_FAKE} <= classes:
        raise ValueError("warm-up needs both classes in the labeled split")
    steps_per_pass = max(1, math.ceil(len(labeled) / config.batch_size))
    for ep in range(warmup_epochs):
        for step in range(steps_per_pass):
            rows = state.cycler.next()
            state.digest.update("warmup", ep, step, labeled.ids[rows],
                                np.empty(0, dtype=np.uint64))
            grads = _zero_grads(model)
            drop_u = state.rng_drop_l.uniform(len(rows) * model.hidden)
            backend.train_step(model, labeled.V[rows], labeled.T[rows],
                               labeled.y[rows].astype(np.float64), drop_u,
                               config.lam, config.lam > 0, grads)
            mod.adam_step(model, grads, state.adam, config.lr0)
    return model


def train_epoch(model: mod.Model, epoch: int, labeled: Split, unlabeled: Split,
                config: TrainConfig, state: TrainState) -> dict:
    """One epoch of the joint loop; returns the epoch's metrics dict."""
    n_ul = len(unlabeled)
    bs = config.batch_size
    steps = math.ceil(n_ul / bs) if n_ul else max(1, math.ceil(len(labeled) / bs))
    lr = mod.lr_schedule(epoch, config)
    ul_order = state.rng_ul_order.permutation(n_ul)

    thresholds = None
    if config.policy == "consensus" and config.threshold_refresh == "per_epoch":
        thresholds = _estimate_from_rows(model, labeled,
                                         np.arange(len(labeled)), config, state)
        state.last_thresholds = thresholds

    sums = {"l_sup": 0.0, "l_cc": 0.0, "l_unsup": 0.0, "total": 0.0}
    assignments = np.full(n_ul, int(PseudoLabel.IGNORE), dtype=np.int8)

    for step in range(steps):
        l_rows = state.cycler.next()
        ul_rows = ul_order[step * bs:(step + 1) * bs]
        state.digest.update("train", epoch, step, labeled.ids[l_rows],
                            unlabeled.ids[ul_rows])

        if config.policy == "consensus" and config.threshold_refresh == "per_batch":
            try:
                thresholds = _estimate_from_rows(model, labeled, l_rows,
                                                 config, state)
                state.last_thresholds = thresholds
            except ValueError:
                # Single-class minibatch: keep the last valid estimate.
                thresholds = state.last_thresholds
        pseudo = None
        if len(ul_rows) and (config.policy != "consensus" or thresholds is not None):
            pseudo = _select_pseudo(model, unlabeled, ul_rows, thresholds,
                                    config, state)
        if pseudo is not None:
            assignments[ul_rows] = pseudo

        grads = _zero_grads(model)
        drop_u = state.rng_drop_l.uniform(len(l_rows) * model.hidden)
        l_sup, l_cc = backend.train_step(
            model, labeled.V[l_rows], labeled.T[l_rows],
            labeled.y[l_rows].astype(np.float64), drop_u,
            config.lam, config.lam > 0, grads)

        l_unsup = 0.0
        if pseudo is not None:
            acc_rows = ul_rows[pseudo != int(PseudoLabel.IGNORE)]
            if len(acc_rows):
                targets = assignments[acc_rows].astype(np.float64)
                drop_u = state.rng_drop_ul.uniform(len(acc_rows) * model.hidden)
                l_unsup, _ = backend.train_step(
                    model, unlabeled.V[acc_rows], unlabeled.T[acc_rows],
                    targets, drop_u, 0.0, False, grads)

        mod.adam_step(model, grads, state.adam, lr)
        sums["l_sup"] += l_sup
        sums["l_cc"] += l_cc
        sums["l_unsup"] += l_unsup
        sums["total"] += l_sup + l_unsup + config.lam * l_cc

    losses = {k: v / steps for k, v in sums.items()}
    losses["lambda"] = config.lam
    quality = pseudo_label_quality(assignments, unlabeled.y) if n_ul else {
        "coverage": 0.0, "accepted": 0, "total": 0,
        "precision_real": None, "precision_fake": None,
        "recall_real": None, "recall_fake": None,
    }
    metrics = {
        "epoch": epoch,
        "lr": lr,
        "losses": losses,
        "thresholds": thresholds.to_dict() if thresholds is not None else None,
        **quality,
    }
    if config.policy == "freematch_star":
        metrics["fm_tau"] = state.fm_tau
    return metrics


def fit(config: TrainConfig, store: EmbeddingStore | None = None,
        manifest: SplitManifest | None = None):
    """Full run: warm-up, epochs, per-epoch eval, report. Deterministic.

    Returns (model, per-epoch metrics history, report dict). When
    config.out_dir is set, also writes metrics.jsonl, report.json and a
    final checkpoint there.
    """
    config.validate()
    if store is None:
        store = EmbeddingStore.load(config.store_path)
    if manifest is None:
        manifest = SplitManifest.load(config.manifest_path)
    manifest.validate(store)

    labeled_ids = list(manifest.train_labeled)
    unlabeled_ids = list(manifest.train_unlabeled)
    if config.unmask_unlabeled:
        # Upper-bound mode: move the unlabeled pool, ground truth and all,
        # into the labeled split.
        labeled_ids = labeled_ids + unlabeled_ids
        unlabeled_ids = []
    labeled = gather_split(store, labeled_ids)
    unlabeled = gather_split(store, unlabeled_ids)
    if config.unmask_unlabeled and np.any(labeled.y == LABEL_UNLABELED):
        raise ValueError("unmask_unlabeled requires ground truth for every record")
    val = gather_split(store, manifest.val)
    test = gather_split(store, manifest.test)

    dim = store.dim
    hidden = config.hidden or dim
    model = mod.Model.init(dim, hidden, Rng(derive_seed(config.seed, "init")),
                           p_drop=config.p_drop)
    state = TrainState(
        adam=mod.Adam(model, lr=config.lr0),
        cycler=BatchCycler(len(labeled), config.batch_size,
                           Rng(derive_seed(config.seed, "labeled_order"))),
        rng_ul_order=Rng(derive_seed(config.seed, "unlabeled_order")),
        rng_drop_l=Rng(derive_seed(config.seed, "dropout_labeled")),
        rng_drop_ul=Rng(derive_seed(config.seed, "dropout_unlabeled")),
        digest=DataOrderDigest(),
    )
    n_real_l = int(np.sum(labeled.y == LABEL_REAL))
    n_fake_l = int(np.sum(labeled.y == LABEL_FAKE))
    state.quality_counts["labeled_ratio"] = (max(n_real_l, 1), max(n_fake_l, 1))
    if config.blip_score_mode == "text_gen":
        state.sb_labeled = consensus.blip_score(labeled.T, labeled.G)
        state.sb_unlabeled = (consensus.blip_score(unlabeled.T, unlabeled.G)
                              if len(unlabeled) else np.empty(0))

    warmup(model, labeled, config.warmup_epochs, config, state)

    history = []
    # Model selection: the epoch with the highest validation accuracy (first
    # epoch wins ties). "final" keeps the last epoch for trend inspection.
    best = {"epoch": -1, "val": None, "test": None}
    for epoch in range(config.epochs):
        metrics = train_epoch(model, epoch, labeled, unlabeled, config, state)
        metrics["val"] = evaluate(model, val.V, val.T, val.y) if len(val) else None
        metrics["test"] = evaluate(model, test.V, test.T, test.y) if len(test) else None
        if metrics["val"] and (best["val"] is None
                               or metrics["val"]["accuracy"] > best["val"]["accuracy"]):
            best = {"epoch": epoch, "val": metrics["val"], "test": metrics["test"]}
        history.append(metrics)
        if (config.out_dir and config.checkpoint_every
                and (epoch + 1) % config.checkpoint_every == 0):
            os.makedirs(config.out_dir, exist_ok=True)
            mod.save_checkpoint(model, os.path.join(config.out_dir,
                                                    f"epoch_{epoch:03d}.ckpt"),
                                step=state.adam.t)

    report = {
        "config": config.to_dict(),
        "backend": backend.BACKEND,
        "dataset": {
            "dim": dim,
            "n_labeled": len(labeled),
            "n_unlabeled": len(unlabeled),
            "n_val": len(val),
            "n_test": len(test),
            "labeled_real": n_real_l,
            "labeled_fake": n_fake_l,
        },
        "data_order": {
            "digest": state.digest.hexdigest(),
            "steps_per_epoch": (math.ceil(len(unlabeled) / config.batch_size)
                                if len(unlabeled)
                                else max(1, math.ceil(len(labeled) / config.batch_size))),
        },
        "schedule": {"lr_by_epoch": [mod.lr_schedule(e, config)
                                     for e in range(config.epochs)]},
        "policy": {"kind": config.policy,
                   "fixed_tau": config.fixed_tau if config.policy in
                   ("fixmatch", "freematch_star", "adsh") else None,
                   "ema_decay": (config.ema_decay
                                 if config.policy == "freematch_star" else None)},
        "epochs": history,
        "final": {"val": history[-1]["val"], "test": history[-1]["test"]},
        "best_val": best,
    }
    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)
        with open(os.path.join(config.out_dir, "metrics.jsonl"), "w",
                  encoding="utf-8") as fh:
            for row in history:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        with open(os.path.join(config.out_dir, "report.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
        mod.save_checkpoint(model, os.path.join(config.out_dir, "model.ckpt"),
                            step=state.adam.t,
                            extra={"epochs": config.epochs})
    return model, history, report
