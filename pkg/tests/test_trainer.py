"""Training loop orchestration: determinism, stream isolation, reporting."""

import hashlib
import json
import struct

import numpy as np
import pytest

import consem.trainer as tr
from consem.model import Model
from consem.rng import Rng
from consem.store import build_manifest
from consem.synthgen import SynthParams, generate
from consem.trainer import (BatchCycler, DataOrderDigest, TrainConfig,
                            evaluate, fit, gather_split, pseudo_label_quality)


def _dataset(n_real=60, n_fake=60, dim=6, seed=3, labeled_fraction=0.3):
    store = generate(SynthParams(n_real=n_real, n_fake=n_fake, dim=dim,
                                 sigma_real=0.3, sigma_fake=1.2,
                                 sigma_gen=0.4, seed=seed))
    manifest = build_manifest(store, labeled_fraction, seed,
                              val_fraction=0.1, test_fraction=0.1)
    return store, manifest


def _config(**over):
    base = dict(epochs=3, batch_size=16, warmup_epochs=1, seed=11)
    base.update(over)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# config plumbing


def test_config_dict_round_trip_uses_lambda_key():
    cfg = _config(lam=0.5, target_class_ratio=(9, 1))
    d = cfg.to_dict()
    assert d["lambda"] == 0.5 and "lam" not in d
    assert d["target_class_ratio"] == [9, 1]
    back = TrainConfig.from_dict(d)
    assert back == cfg


@pytest.mark.parametrize("bad", [
    dict(epochs=0), dict(batch_size=1), dict(warmup_epochs=3),
    dict(threshold_refresh="hourly"), dict(blip_score_mode="gen_gen"),
    dict(policy="mixmatch"), dict(lam=-0.1),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        _config(**bad).validate()


def test_gather_split_preserves_manifest_order():
    store, _ = _dataset()
    ids = [5, 2, 9]
    split = gather_split(store, ids)
    assert split.ids.tolist() == ids
    for k, i in enumerate(ids):
        row = store.data[store.ids.tolist().index(i)]
        assert np.allclose(split.V[k], row["image"].astype(np.float64))
    assert split.V.dtype == np.float64


# ---------------------------------------------------------------------------
# batching and digests


def test_cycler_batches_cover_a_permutation():
    cyc = BatchCycler(10, 4, Rng(0))
    batches = [cyc.next() for _ in range(3)]
    flat = np.concatenate(batches)
    assert sorted(flat.tolist()) == list(range(10))
    assert all(len(b) >= 2 for b in batches)


def test_cycler_drops_singleton_runt():
    cyc = BatchCycler(5, 2, Rng(1))
    sizes = [len(cyc.next()) for _ in range(6)]
    assert all(s == 2 for s in sizes)  # the trailing 1-sample chunk vanished
    with pytest.raises(ValueError):
        BatchCycler(1, 4, Rng(0))


def test_cycler_reshuffles_between_passes():
    cyc = BatchCycler(64, 64, Rng(2))
    first = cyc.next().tolist()
    second = cyc.next().tolist()
    assert sorted(first) == sorted(second)
    assert first != second


def test_digest_matches_independent_hash():
    d = DataOrderDigest()
    lab = np.array([3, 1], dtype=np.uint64)
    ul = np.array([7], dtype=np.uint64)
    d.update("train", 2, 5, lab, ul)
    h = hashlib.sha256()
    h.update(b"train")
    h.update(struct.pack("<qq", 2, 5))
    h.update(lab.astype("<u8").tobytes())
    h.update(b"|")
    h.update(ul.astype("<u8").tobytes())
    assert d.hexdigest() == h.hexdigest()


def test_digest_is_order_sensitive():
    a, b = DataOrderDigest(), DataOrderDigest()
    ids = np.array([1, 2], dtype=np.uint64)
    none = np.empty(0, dtype=np.uint64)
    a.update("train", 0, 0, ids, none)
    b.update("train", 0, 0, ids[::-1].copy(), none)
    assert a.hexdigest() != b.hexdigest()


# ---------------------------------------------------------------------------
# metrics


def test_evaluate_constant_predictor_hand_counts():
    model = Model.init(4, 3, Rng(0), p_drop=0.0)
    model.W2[:] = 0.0
    model.b2[0] = 5.0  # every prediction lands on "fake"
    rng = Rng(1)
    V = rng.normal(24).reshape(6, 4)
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    labels = np.array([0, 0, 0, 0, 1, 1])
    out = evaluate(model, V, V, labels)
    assert out["accuracy"] == pytest.approx(2 / 6)
    assert out["balanced_accuracy"] == pytest.approx(0.5)
    assert (out["n_real"], out["correct_real"]) == (4, 0)
    assert (out["n_fake"], out["correct_fake"]) == (2, 2)
    with pytest.raises(ValueError):
        evaluate(model, V[:0], V[:0], labels[:0])


def test_pseudo_label_quality_hand_case():
    assignments = np.array([1, 0, -1, 1, 0])
    truth = np.array([1, 0, 1, 0, -1])
    q = pseudo_label_quality(assignments, truth)
    assert q["coverage"] == pytest.approx(0.8)
    assert q["accepted"] == 4
    # fake assignments with known truth: [1 ok, 1 wrong] -> precision 1/2
    assert q["precision_fake"] == pytest.approx(0.5)
    assert q["precision_real"] == pytest.approx(1.0)  # the -1 truth is excluded
    assert q["recall_fake"] == pytest.approx(0.5)


def test_pseudo_label_quality_undefined_ratios_are_none():
    q = pseudo_label_quality(np.array([-1, -1]), np.array([0, 0]))
    assert q["coverage"] == 0.0
    assert q["precision_fake"] is None and q["recall_fake"] is None


# ---------------------------------------------------------------------------
# fit


def test_fit_is_deterministic():
    store, manifest = _dataset()
    _, _, r1 = fit(_config(), store=store, manifest=manifest)
    _, _, r2 = fit(_config(), store=store, manifest=manifest)
    assert json.dumps(r1, sort_keys=True) == json.dumps(r2, sort_keys=True)
    _, _, r3 = fit(_config(seed=12), store=store, manifest=manifest)
    assert r1["data_order"]["digest"] != r3["data_order"]["digest"]


def test_fit_report_structure():
    store, manifest = _dataset()
    model, history, report = fit(_config(), store=store, manifest=manifest)
    assert len(history) == 3
    assert report["dataset"]["n_labeled"] == len(manifest.train_labeled)
    assert report["dataset"]["n_unlabeled"] == len(manifest.train_unlabeled)
    assert [h["lr"] for h in history] == report["schedule"]["lr_by_epoch"]
    best = report["best_val"]
    assert best["test"] == history[best["epoch"]]["test"]
    assert best["val"]["accuracy"] == max(h["val"]["accuracy"] for h in history)
    assert report["final"]["test"] == history[-1]["test"]
    assert report["policy"] == {"kind": "consensus", "fixed_tau": None,
                                "ema_decay": None}


def test_fit_writes_run_artifacts(tmp_path):
    store, manifest = _dataset()
    out = tmp_path / "run"
    fit(_config(out_dir=str(out)), store=store, manifest=manifest)
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert json.loads(lines[0])["epoch"] == 0
    report = json.loads((out / "report.json").read_text())
    assert report["backend"] in ("fast", "pure")
    assert (out / "model.ckpt").exists()


def test_ignored_samples_leave_no_trace(monkeypatch):
    """A consensus run whose rule accepts nothing must train exactly like
    the supervised baseline: same parameters, same optimizer trajectory."""
    store, manifest = _dataset()
    m_sup, _, _ = fit(_config(policy="sup_only"), store=store, manifest=manifest)

    def reject_everything(model, unlabeled, rows, thresholds, config, state):
        return np.full(len(rows), -1, dtype=np.int8)

    monkeypatch.setattr(tr, "_select_pseudo", reject_everything)
    m_con, _, _ = fit(_config(policy="consensus"), store=store, manifest=manifest)
    for name in ("A", "W1", "b1", "gamma", "beta", "W2", "b2",
                 "running_mean", "running_var"):
        assert np.array_equal(getattr(m_sup, name), getattr(m_con, name)), name


def test_text_gen_blip_thresholds_constant_across_epochs():
    store, manifest = _dataset(n_real=100, n_fake=100)
    _, history, _ = fit(_config(epochs=4), store=store, manifest=manifest)
    tb = [(h["thresholds"]["tau_b_real"], h["thresholds"]["tau_b_fake"])
          for h in history]
    tc = [h["thresholds"]["tau_c_real"] for h in history]
    assert len(set(tb)) == 1    # no adapter in the text/gen channel
    assert len(set(tc)) > 1     # the image channel moves with training


def test_image_gen_mode_recomputes_blip_channel():
    store, manifest = _dataset(n_real=100, n_fake=100)
    _, history, _ = fit(_config(epochs=4, blip_score_mode="image_gen"),
                        store=store, manifest=manifest)
    tb = [h["thresholds"]["tau_b_real"] for h in history]
    assert len(set(tb)) > 1     # adapted image now feeds both channels


def test_per_batch_refresh_runs_and_differs():
    store, manifest = _dataset()
    _, h_epoch, _ = fit(_config(), store=store, manifest=manifest)
    _, h_batch, _ = fit(_config(threshold_refresh="per_batch"),
                        store=store, manifest=manifest)
    assert h_batch[-1]["thresholds"] is not None
    assert h_batch[-1]["thresholds"] != h_epoch[-1]["thresholds"]


def test_policies_share_data_order_and_schedule():
    store, manifest = _dataset()
    reports = {}
    for policy in ("consensus", "sup_only", "fixmatch"):
        _, _, reports[policy] = fit(_config(policy=policy),
                                    store=store, manifest=manifest)
    digests = {r["data_order"]["digest"] for r in reports.values()}
    schedules = {tuple(r["schedule"]["lr_by_epoch"]) for r in reports.values()}
    assert len(digests) == 1 and len(schedules) == 1
    assert reports["fixmatch"]["policy"]["fixed_tau"] == 0.95
    assert reports["sup_only"]["policy"]["fixed_tau"] is None


def test_non_consensus_policies_report_no_thresholds():
    store, manifest = _dataset()
    _, history, _ = fit(_config(policy="fixmatch"), store=store, manifest=manifest)
    assert all(h["thresholds"] is None for h in history)
    _, history, _ = fit(_config(policy="freematch_star"),
                        store=store, manifest=manifest)
    assert all("fm_tau" in h for h in history)


def test_empty_unlabeled_pool_falls_back_to_labeled_steps():
    store, manifest = _dataset()
    manifest.train_unlabeled = []
    _, history, report = fit(_config(), store=store, manifest=manifest)
    assert report["dataset"]["n_unlabeled"] == 0
    assert report["data_order"]["steps_per_epoch"] == \
        -(-len(manifest.train_labeled) // 16)
    assert all(h["coverage"] == 0.0 for h in history)


def test_unmask_unlabeled_moves_pool_into_labeled():
    store, manifest = _dataset()
    n_total = len(manifest.train_labeled) + len(manifest.train_unlabeled)
    _, _, report = fit(_config(unmask_unlabeled=True),
                       store=store, manifest=manifest)
    assert report["dataset"]["n_labeled"] == n_total
    assert report["dataset"]["n_unlabeled"] == 0


def test_unmask_requires_ground_truth():
    rng = Rng(0)
    n, dim = 40, 4
    vecs = lambda: np.stack([v / np.linalg.norm(v) for v in
                             rng.normal(n * dim).reshape(n, dim)])
    from consem.store import EmbeddingStore, SplitManifest
    labels = [0] * 10 + [1] * 10 + [-1] * 20
    store = EmbeddingStore.build(range(n), labels, vecs(), vecs(), vecs())
    manifest = SplitManifest(train_labeled=list(range(4)) + list(range(10, 14)),
                             train_unlabeled=list(range(20, 40)),
                             val=[4, 14], test=[5, 15])
    with pytest.raises(ValueError, match="ground truth"):
        fit(_config(unmask_unlabeled=True), store=store, manifest=manifest)


def test_warmup_needs_both_classes():
    store, manifest = _dataset()
    truth = {int(i): int(l) for i, l in zip(store.ids, store.labels)}
    manifest.train_labeled = [i for i in manifest.train_labeled
                              if truth[i] == 0][:8]
    manifest.train_unlabeled = []
    with pytest.raises(ValueError, match="classes"):
        fit(_config(), store=store, manifest=manifest)


def test_history_lrs_follow_the_schedule():
    store, manifest = _dataset()
    cfg = _config(epochs=6, warm_const_epochs=2, lr0=1e-3, lr_min=1e-5)
    _, history, _ = fit(cfg, store=store, manifest=manifest)
    from consem.model import lr_schedule
    assert [h["lr"] for h in history] == [lr_schedule(e, cfg) for e in range(6)]
