"""Command-line interface for reproducible experiments.

Subcommands: synth (generate a dataset), ingest (validate an externally
produced store), train (consensus training), baseline (swapped policy),
ablate (three-row loss ablation), sweep-unlabeled (unlabeled-amount sweep),
report (aggregate run outputs into a CSV table).

Exit codes: 0 success, 2 config error, 1 runtime error; errors are printed
as a single JSON line on stderr. All randomness derives from the config
seed (or --seed override), so rerunning a command reproduces its outputs
byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .config import ConfigError, load_config
from .rng import derive_seed
from .store import (EmbeddingStore, SplitManifest, apply_imbalance,
                    build_manifest, subsample_unlabeled)
from .synthgen import SynthParams, difficulty_stats, generate
from .trainer import TrainConfig, fit

DEFAULT_MULTIPLIERS = [0.0, 1.0, 2.0, 4.0, 10.0]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route usage errors through the config path
        raise ConfigError(message)


def _emit(obj, stream=None) -> None:
    print(json.dumps(obj, sort_keys=True), file=stream or sys.stdout)


def _prepare_data(cfg: dict, seed: int):
    """Resolve (store, manifest) from paths or an embedded synth section."""
    if "store" in cfg:
        store = EmbeddingStore.load(cfg["store"])
        manifest = SplitManifest.load(cfg["manifest"])
    elif "synth" in cfg:
        mb = cfg.get("manifest_build", {})
        if "labeled_fraction" not in mb:
            raise ConfigError("synth configs need manifest_build.labeled_fraction")
        try:
            params = SynthParams(seed=derive_seed(seed, "data"), **cfg["synth"])
            params.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synth section: {exc}") from exc
        store = generate(params)
        manifest = build_manifest(
            store, mb["labeled_fraction"], derive_seed(seed, "split"),
            val_fraction=mb.get("val_fraction", 0.1),
            test_fraction=mb.get("test_fraction", 0.1))
    else:
        raise ConfigError("config needs either store+manifest paths or a synth section")

    if "imbalance" in cfg:
        ratio = tuple(cfg["imbalance"]["ratio"])
        targets = cfg["imbalance"].get("apply_to",
                                       ["train_labeled", "train_unlabeled"])
        truth = {int(i): int(l) for i, l in zip(store.ids, store.labels)}
        for part in targets:
            ids = getattr(manifest, part)
            labels = [truth[int(i)] for i in ids]
            setattr(manifest, part, apply_imbalance(
                ids, labels, ratio, derive_seed(seed, "imbalance", part)))

    if "multiplier" in cfg:
        manifest.train_unlabeled = subsample_unlabeled(
            manifest.train_unlabeled, cfg["multiplier"],
            len(manifest.train_labeled), derive_seed(seed, "multiplier"))
    return store, manifest


def _train_config(cfg: dict, seed: int, out_dir: str | None,
                  policy: dict | None = None) -> TrainConfig:
    try:
        tc = TrainConfig.from_dict(dict(cfg.get("train", {})))
        tc.seed = seed
        tc.out_dir = out_dir
        if policy:
            tc.policy = policy["kind"]
            tc.fixed_tau = policy.get("fixed_tau", tc.fixed_tau)
            tc.ema_decay = policy.get("ema_decay", tc.ema_decay)
            if policy.get("target_class_ratio") is not None:
                tc.target_class_ratio = tuple(policy["target_class_ratio"])
        tc.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training configuration: {exc}") from exc
    return tc


def _summary_line(report: dict) -> dict:
    test = report["best_val"].get("test") or report["final"]["test"] or {}
    return {
        "policy": report["policy"]["kind"],
        "test_accuracy": test.get("accuracy"),
        "test_balanced_accuracy": test.get("balanced_accuracy"),
        "out_dir": report["config"]["out_dir"],
    }


def cmd_synth(cfg, seed, out_dir) -> int:
    if not out_dir:
        raise ConfigError("synth needs --out or out_dir in the config")
    store, manifest = _prepare_data(cfg, seed)
    os.makedirs(out_dir, exist_ok=True)
    store.save(os.path.join(out_dir, "store.cvlm"))
    manifest.save(os.path.join(out_dir, "manifest.json"))
    stats = difficulty_stats(store)
    with open(os.path.join(out_dir, "difficulty.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(stats, sort_keys=True, indent=2) + "\n")
    _emit({"out_dir": out_dir, "records": len(store), "dim": store.dim,
           "labeled": len(manifest.train_labeled),
           "unlabeled": len(manifest.train_unlabeled),
           "val": len(manifest.val), "test": len(manifest.test)})
    return 0


def cmd_ingest(args) -> int:
    store = EmbeddingStore.load(args.store)
    clean = store.renormalized()
    dev = clean.norm_stats()
    worst = max(dev.values()) if dev else 0.0
    if worst > 1e-4:
        raise ValueError(f"embeddings deviate from unit norm by {worst:g} "
                         "after normalization")
    manifest_ok = None
    if args.manifest:
        SplitManifest.load(args.manifest).validate(store)
        manifest_ok = True
    labels = store.labels
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        clean.save(os.path.join(args.out, "store.cvlm"))
    _emit({
        "records": len(store),
        "dim": store.dim,
        "has_gen": store.has_gen,
        "label_counts": {"real": int((labels == 0).sum()),
                         "fake": int((labels == 1).sum()),
                         "unlabeled": int((labels == -1).sum())},
        "max_norm_deviation": worst,
        "raw_norm_deviation": max(store.norm_stats().values()),
        "manifest_ok": manifest_ok,
    })
    return 0


def cmd_train(cfg, seed, out_dir) -> int:
    store, manifest = _prepare_data(cfg, seed)
    tc = _train_config(cfg, seed, out_dir)
    _, _, report = fit(tc, store=store, manifest=manifest)
    _emit(_summary_line(report))
    return 0


def cmd_baseline(cfg, seed, out_dir) -> int:
    if "policy" not in cfg:
        raise ConfigError("baseline needs a policy section")
    store, manifest = _prepare_data(cfg, seed)
    tc = _train_config(cfg, seed, out_dir, policy=cfg["policy"])
    _, _, report = fit(tc, store=store, manifest=manifest)
    _emit(_summary_line(report))
    return 0


def cmd_ablate(cfg, seed, out_dir) -> int:
    if not out_dir:
        raise ConfigError("ablate needs --out or out_dir in the config")
    store, manifest = _prepare_data(cfg, seed)
    base = _train_config(cfg, seed, None)
    lam = base.lam if base.lam > 0 else 1.0
    rows = [("ce", "sup_only", 0.0), ("ce_cc", "sup_only", lam),
            ("full", "consensus", lam)]
    results = []
    for name, policy, row_lam in rows:
        tc = _train_config(cfg, seed, os.path.join(out_dir, name))
        tc.policy = policy
        tc.lam = row_lam
        _, _, report = fit(tc, store=store, manifest=manifest)
        test = report["best_val"].get("test") or report["final"]["test"] or {}
        results.append({"row": name, "policy": policy, "lambda": row_lam,
                        "test_accuracy": test.get("accuracy"),
                        "test_balanced_accuracy": test.get("balanced_accuracy")})
    with open(os.path.join(out_dir, "ablation.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(results[0]))
        writer.writeheader()
        writer.writerows(results)
    with open(os.path.join(out_dir, "ablation.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(results, sort_keys=True, indent=2) + "\n")
    _emit({"rows": results})
    return 0


def cmd_sweep(cfg, seed, out_dir) -> int:
    if not out_dir:
        raise ConfigError("sweep-unlabeled needs --out or out_dir in the config")
    base_cfg = {k: v for k, v in cfg.items() if k not in ("multiplier", "multipliers")}
    store, manifest = _prepare_data(base_cfg, seed)
    multipliers = cfg.get("multipliers", DEFAULT_MULTIPLIERS)
    results = []
    for mult in multipliers:
        sub = SplitManifest(**manifest.to_dict())
        sub.train_unlabeled = subsample_unlabeled(
            manifest.train_unlabeled, mult, len(manifest.train_labeled),
            derive_seed(seed, "multiplier", mult))
        tc = _train_config(cfg, seed, os.path.join(out_dir, f"mult_{mult:g}"))
        _, _, report = fit(tc, store=store, manifest=sub)
        test = report["best_val"].get("test") or report["final"]["test"] or {}
        results.append({"multiplier": mult,
                        "n_unlabeled": len(sub.train_unlabeled),
                        "test_accuracy": test.get("accuracy"),
                        "test_balanced_accuracy": test.get("balanced_accuracy")})
    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(results[0]))
        writer.writeheader()
        writer.writerows(results)
    _emit({"rows": results})
    return 0


SUMMARY_COLUMNS = ["run", "policy", "seed", "lambda", "n_labeled", "n_unlabeled",
                   "test_accuracy", "test_balanced_accuracy",
                   "best_val_epoch", "best_val_accuracy", "final_test_accuracy"]


def cmd_report(cfg, out_dir) -> int:
    if not out_dir:
        raise ConfigError("report needs --out or out_dir in the config")
    run_dirs = list(cfg.get("runs", []))
    root = cfg.get("root")
    if root:
        for dirpath, _, filenames in sorted(os.walk(root)):
            if "report.json" in filenames:
                run_dirs.append(dirpath)
    if not run_dirs:
        raise ConfigError("report needs runs or root in the config")
    rows = []
    for run in run_dirs:
        with open(os.path.join(run, "report.json"), encoding="utf-8") as fh:
            report = json.load(fh)
        best = report["best_val"]
        test = best.get("test") or report["final"]["test"] or {}
        rows.append({
            "run": run,
            "policy": report["policy"]["kind"],
            "seed": report["config"]["seed"],
            "lambda": report["config"]["lambda"],
            "n_labeled": report["dataset"]["n_labeled"],
            "n_unlabeled": report["dataset"]["n_unlabeled"],
            "test_accuracy": test.get("accuracy"),
            "test_balanced_accuracy": test.get("balanced_accuracy"),
            "best_val_epoch": best["epoch"],
            "best_val_accuracy": (best.get("val") or {}).get("accuracy"),
            "final_test_accuracy": (report["final"]["test"] or {}).get("accuracy"),
        })
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "summary.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    _emit({"summary": path, "rows": len(rows)})
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="consem",
                     description="Semi-supervised consensus training engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")

    for name in ("synth", "train", "baseline", "ablate", "sweep-unlabeled",
                 "report"):
        common(sub.add_parser(name))

    ingest = sub.add_parser("ingest")
    ingest.add_argument("store", help="path to a CVLM store file")
    ingest.add_argument("manifest", nargs="?", default=None,
                        help="optional split manifest to validate")
    ingest.add_argument("--out", default=None,
                        help="write the renormalized store here")
    return parser


def run(argv) -> int:
    """Dispatch a CLI invocation; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        if args.command == "ingest":
            return cmd_ingest(args)
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        out_dir = args.out or cfg.get("out_dir")
        if args.command == "synth":
            return cmd_synth(cfg, seed, out_dir)
        if args.command == "train":
            return cmd_train(cfg, seed, out_dir)
        if args.command == "baseline":
            return cmd_baseline(cfg, seed, out_dir)
        if args.command == "ablate":
            return cmd_ablate(cfg, seed, out_dir)
        if args.command == "sweep-unlabeled":
            return cmd_sweep(cfg, seed, out_dir)
        if args.command == "report":
            return cmd_report(cfg, out_dir)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        _emit({"error": str(exc), "kind": "config"}, stream=sys.stderr)
        return 2
    except SystemExit:
        raise
    except BaseException as exc:  # runtime failures map to exit 1
        _emit({"error": f"{type(exc).__name__}: {exc}", "kind": "runtime"},
              stream=sys.stderr)
        return 1


def console_entry() -> None:
    sys.exit(run(sys.argv[1:]))
