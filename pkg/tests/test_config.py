import json
import math

import pytest

from photonlab.config import MHZ, NS, SCHEMA, US, ExperimentConfig, builtin_document
from photonlab.errors import ConfigError


@pytest.fixture
def doc():
    return builtin_document("calibrated")


def test_builtin_units(base_cfg):
    assert base_cfg.memory.delta == pytest.approx(-52 * 2 * math.pi * 1e6)
    assert base_cfg.memory.gamma == pytest.approx(2 * math.pi * 3.03e6)
    assert base_cfg.protocol.storage_time == pytest.approx(1.2e-6)
    assert base_cfg.windows.input == pytest.approx((240e-9, 540e-9))
    assert base_cfg.protocol.read.peak_rabi == pytest.approx(30.3 * MHZ)
    assert base_cfg.source.envelope.fwhm == pytest.approx(120 * NS)
    assert base_cfg.source.trial_period == pytest.approx(4 * US)
    assert base_cfg.detection.overall_efficiency == 0.21


def test_operating_point(base_cfg):
    op = base_cfg.source.operating_point()
    assert op.p_gen == pytest.approx(0.12, abs=1e-3)
    assert op.g2_0 == pytest.approx(0.23, abs=0.01)


@pytest.mark.parametrize("path,value", [
    (("memory", "d"), -1.0),
    (("memory", "gamma_mhz"), 0),
    (("source", "p_gen"), 1.5),
    (("protocol", "write", "shape"), "triangle"),
    (("noise", "profile"), "pink"),
    (("run", "n_trials"), -3),
    (("run", "kind"), "dark"),
    (("memory", "nz"), 8),
])
def test_schema_rejects(doc, path, value):
    node = doc
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value
    with pytest.raises(ConfigError, match="/".join(path)):
        ExperimentConfig.from_dict(doc)


def test_unknown_key_and_missing_section(doc):
    doc["memory"]["optical_depth"] = 5
    with pytest.raises(ConfigError, match="optical_depth"):
        ExperimentConfig.from_dict(doc)
    doc = builtin_document("calibrated")
    del doc["windows"]
    with pytest.raises(ConfigError, match="windows"):
        ExperimentConfig.from_dict(doc)


def test_schema_version(doc):
    doc["schema_version"] = 2
    with pytest.raises(ConfigError, match="schema_version"):
        ExperimentConfig.from_dict(doc)
    assert SCHEMA["properties"]["schema_version"] == {"const": 1}


@pytest.mark.parametrize("section,patch,match", [
    ("windows", {"trial_period_us": 5.0}, "trial periods differ"),
    ("windows", {"stored_start_ns": 400.0}, "overlap"),
    ("windows", {"stored_start_ns": 3950.0}, "exceeds"),
    ("protocol", {"storage_time_us": 3.0}, "beyond the trial period"),
    ("protocol", {"write_window_ns": [900.0, 100.0]}, "write window"),
    ("source", {"p_gen": 0.9, "g2_0": 1.5}, "infeasible"),
    ("detection", {"efficiency_override": 1.5}, "efficiency_override"),
    ("noise", {"p_noise_per_trial": 2.0}, "p_noise"),
])
def test_cross_checks(base_cfg, section, patch, match):
    with pytest.raises(ConfigError, match=match):
        base_cfg.with_changes(**{section: patch})


def test_hash_lineage(base_cfg):
    same = base_cfg.with_changes(run={"kind": "noise_only", "n_trials": 5, "master_seed": 9},
                                  description="other words")
    assert same.config_hash() == base_cfg.config_hash()
    assert len(base_cfg.config_hash()) == 32
    changed = base_cfg.with_changes(noise={"p_noise_per_trial": 2.4e-4})
    assert changed.config_hash() != base_cfg.config_hash()


def test_load_round_trip(tmp_path, base_cfg):
    p = tmp_path / "c.json"
    p.write_text(base_cfg.to_json())
    again = ExperimentConfig.load(p)
    assert again.config_hash() == base_cfg.config_hash()
    assert again.protocol == base_cfg.protocol


def test_load_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        ExperimentConfig.load(bad)
    with pytest.raises(OSError):
        ExperimentConfig.load(tmp_path / "missing.json")
    with pytest.raises(ConfigError, match="no built-in"):
        ExperimentConfig.builtin("nope")


def test_document_is_json_serializable(base_cfg):
    assert json.loads(base_cfg.to_json())["run"]["master_seed"] == 2021
