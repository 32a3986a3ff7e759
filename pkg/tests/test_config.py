"""Config schema acceptance and rejection."""

import json

import pytest

from consem.config import ConfigError, load_config, validate_config


def _valid():
    return {
        "seed": 3,
        "synth": {"n_real": 100, "n_fake": 100, "dim": 8, "sigma_real": 0.3,
                  "sigma_fake": 1.2, "sigma_gen": 0.4},
        "manifest_build": {"labeled_fraction": 0.1},
        "train": {"epochs": 5, "lambda": 1.0},
        "policy": {"kind": "fixmatch", "fixed_tau": 0.9},
    }


def test_valid_config_passes():
    validate_config(_valid())


def test_store_requires_manifest():
    with pytest.raises(ConfigError, match="together"):
        validate_config({"store": "x.cvlm"})
    validate_config({"store": "x.cvlm", "manifest": "m.json"})


@pytest.mark.parametrize("mutate,fragment", [
    (lambda c: c.update(extra_section=1), "extra_section"),
    (lambda c: c["synth"].update(sigma=1.0), "synth"),
    (lambda c: c["synth"].pop("dim"), "dim"),
    (lambda c: c["train"].update(threshold_refresh="sometimes"), "threshold_refresh"),
    (lambda c: c["policy"].update(kind="selftrain"), "kind"),
    (lambda c: c["policy"].update(fixed_tau=0.5), "fixed_tau"),
    (lambda c: c["manifest_build"].update(labeled_fraction=1.0), "labeled_fraction"),
    (lambda c: c.update(imbalance={"ratio": [9]}), "ratio"),
    (lambda c: c.update(imbalance={"ratio": [9, 0]}), "ratio"),
    (lambda c: c.update(seed=-1), "seed"),
])
def test_schema_rejections(mutate, fragment):
    cfg = _valid()
    mutate(cfg)
    with pytest.raises(ConfigError) as err:
        validate_config(cfg)
    assert fragment in str(err.value)


def test_load_config_reports_read_and_parse_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps(_valid()))
    assert load_config(good)["seed"] == 3


def test_shipped_configs_validate():
    import glob
    import os
    here = os.path.join(os.path.dirname(__file__), "..", "configs", "*.json")
    paths = glob.glob(here)
    assert len(paths) >= 4
    for path in paths:
        load_config(path)
