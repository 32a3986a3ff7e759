"""Comparison pseudo-labeling policies run through the shared trainer loop.

Each policy replaces only the pseudo-label selection step; model, optimizer,
schedule and data order stay identical to the consensus run for a given
seed, so any metric difference is attributable to the policy. sup_only
disables the unlabeled loss entirely and plays the role of the
supervised-only bound (lower bound on the labeled subset, upper bound when
the trainer is told to unmask the unlabeled pool).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .consensus import PseudoLabel

POLICY_KINDS = ("consensus", "sup_only", "fixmatch", "freematch_star", "adsh")


@dataclass
class BaselinePolicy:
    kind: str
    fixed_tau: float = 0.95
    ema_decay: float = 0.999
    target_class_ratio: tuple | None = None  # (real, fake); adsh only

    def validate(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not 0.5 < self.fixed_tau < 1.0:
            raise ValueError("fixed_tau must lie in (0.5, 1)")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.target_class_ratio is not None:
            r, f = self.target_class_ratio
            if r < 1 or f < 1:
                raise ValueError("target_class_ratio parts must be >= 1")


def fixmatch_select(y_hat: np.ndarray, tau: float) -> np.ndarray:
    """Fixed-threshold selection on prediction confidence.

    confidence = max(y_hat, 1 - y_hat); accepted when confidence >= tau,
    labeled Fake when y_hat > 0.5. An exact tie at 0.5 is Ignore regardless
    of tau: the predicted class is undefined there.
    """
    y_hat = np.asarray(y_hat)
    conf = np.maximum(y_hat, 1.0 - y_hat)
    out = np.full(y_hat.shape, int(PseudoLabel.IGNORE), dtype=np.int8)
    accept = (conf >= tau) & (y_hat != 0.5)
    out[accept & (y_hat > 0.5)] = int(PseudoLabel.FAKE)
    out[accept & (y_hat < 0.5)] = int(PseudoLabel.REAL)
    return out


def freematch_update(tau: float, confidences: np.ndarray, decay: float) -> float:
    """One EMA step pulling the global threshold toward the batch mean."""
    confidences = np.asarray(confidences)
    if len(confidences) == 0:
        raise ValueError("freematch update needs a nonempty batch")
    return decay * tau + (1.0 - decay) * float(np.mean(confidences))


def adsh_thresholds(conf_real: np.ndarray, conf_fake: np.ndarray,
                    target_ratio: tuple, fixed_tau: float) -> tuple[float, float]:
    """Class-dependent thresholds: majority fixed, minority quantile-matched.

    The majority class (per target_ratio) keeps fixed_tau. The minority
    threshold is lowered to the largest confidence whose acceptance count
    matches the majority's acceptance scaled by the class ratio
    (lower-nearest rank on the descending-sorted minority pool), but never
    raised above fixed_tau. Returns (tau_real, tau_fake).
    """
    conf_real = np.asarray(conf_real, dtype=np.float64)
    conf_fake = np.asarray(conf_fake, dtype=np.float64)
    if len(conf_real) == 0 or len(conf_fake) == 0:
        raise ValueError("adsh needs a nonempty confidence pool for each class")
    r, f = target_ratio
    if r >= f:
        maj_conf, min_conf = conf_real, conf_fake
        ratio = f / r
    else:
        maj_conf, min_conf = conf_fake, conf_real
        ratio = r / f
    n_maj_accepted = int(np.sum(maj_conf >= fixed_tau))
    k = int(round(n_maj_accepted * ratio))
    if k == 0:
        tau_min = fixed_tau
    else:
        ranked = np.sort(min_conf)[::-1]
        tau_min = min(fixed_tau, float(ranked[min(k, len(ranked)) - 1]))
    if r >= f:
        return fixed_tau, tau_min
    return tau_min, fixed_tau


def adsh_select(y_hat: np.ndarray, tau_real: float, tau_fake: float) -> np.ndarray:
    """fixmatch_select with a separate threshold per predicted class."""
    y_hat = np.asarray(y_hat)
    conf = np.maximum(y_hat, 1.0 - y_hat)
    out = np.full(y_hat.shape, int(PseudoLabel.IGNORE), dtype=np.int8)
    out[(y_hat > 0.5) & (conf >= tau_fake)] = int(PseudoLabel.FAKE)
    out[(y_hat < 0.5) & (conf >= tau_real)] = int(PseudoLabel.REAL)
    return out


def run_baseline(policy: BaselinePolicy, config, store=None, manifest=None):
    """Train with a swapped pseudo-labeling policy; same report schema."""
    from . import trainer  # deferred: trainer imports this module

    policy.validate()
    cfg = trainer.TrainConfig(**{**config.to_kwargs(), "policy": policy.kind,
                                 "fixed_tau": policy.fixed_tau,
                                 "ema_decay": policy.ema_decay,
                                 "target_class_ratio": policy.target_class_ratio})
    _, _, report = trainer.fit(cfg, store=store, manifest=manifest)
    return report
