"""Experiment config loading and schema validation.

Configs are JSON documents validated against a strict schema (unknown keys
are rejected everywhere) before anything runs, so a typo fails fast with a
config error instead of silently using a default mid-experiment.
"""

from __future__ import annotations

import json

import jsonschema


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


_POSITIVE_INT = {"type": "integer", "minimum": 1}
_FRACTION = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}

_SYNTH = {
    "type": "object",
    "additionalProperties": False,
    "required": ["n_real", "n_fake", "dim", "sigma_real", "sigma_fake", "sigma_gen"],
    "properties": {
        "n_real": {"type": "integer", "minimum": 0},
        "n_fake": {"type": "integer", "minimum": 0},
        "dim": {"type": "integer", "minimum": 2},
        "sigma_real": {"type": "number", "exclusiveMinimum": 0},
        "sigma_fake": {"type": "number", "exclusiveMinimum": 0},
        "sigma_gen": {"type": "number", "exclusiveMinimum": 0},
    },
}

_MANIFEST = {
    "type": "object",
    "additionalProperties": False,
    "required": ["labeled_fraction"],
    "properties": {
        "labeled_fraction": _FRACTION,
        "val_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "test_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    },
}

_IMBALANCE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["ratio"],
    "properties": {
        "ratio": {"type": "array", "items": _POSITIVE_INT,
                  "minItems": 2, "maxItems": 2},
        "apply_to": {
            "type": "array",
            "items": {"enum": ["train_labeled", "train_unlabeled"]},
            "minItems": 1,
        },
    },
}

_TRAIN = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "epochs": _POSITIVE_INT,
        "batch_size": {"type": "integer", "minimum": 2},
        "lr0": {"type": "number", "exclusiveMinimum": 0},
        "warmup_epochs": {"type": "integer", "minimum": 0},
        "lambda": {"type": "number", "minimum": 0},
        "threshold_refresh": {"enum": ["per_epoch", "per_batch"]},
        "blip_score_mode": {"enum": ["text_gen", "image_gen"]},
        "hidden": _POSITIVE_INT,
        "p_drop": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "warm_const_epochs": {"type": "integer", "minimum": 0},
        "lr_min": {"type": "number", "minimum": 0},
        "checkpoint_every": {"type": "integer", "minimum": 0},
        "unmask_unlabeled": {"type": "boolean"},
    },
}

_POLICY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["consensus", "sup_only", "fixmatch",
                          "freematch_star", "adsh"]},
        "fixed_tau": {"type": "number", "exclusiveMinimum": 0.5,
                      "exclusiveMaximum": 1},
        "ema_decay": {"type": "number", "exclusiveMinimum": 0,
                      "exclusiveMaximum": 1},
        "target_class_ratio": {"type": "array", "items": _POSITIVE_INT,
                               "minItems": 2, "maxItems": 2},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
        "store": {"type": "string"},
        "manifest": {"type": "string"},
        "synth": _SYNTH,
        "manifest_build": _MANIFEST,
        "imbalance": _IMBALANCE,
        "multiplier": {"type": "number", "minimum": 0},
        "multipliers": {"type": "array", "items": {"type": "number", "minimum": 0},
                        "minItems": 1},
        "train": _TRAIN,
        "policy": _POLICY,
        "runs": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "root": {"type": "string"},
    },
}


def load_config(path) -> dict:
    """Read and schema-validate a config file; raises ConfigError."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    validate_config(raw)
    return raw


def validate_config(raw: dict) -> None:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from exc
    if ("store" in raw) != ("manifest" in raw):
        raise ConfigError("store and manifest paths must be given together")
