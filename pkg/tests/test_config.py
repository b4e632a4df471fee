"""Experiment-config schema validation and preset resolution."""

import json

import pytest

from changesr.config import (
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    load_config,
    resolve_out_dir,
)


def test_defaults_build():
    cfg = ExperimentConfig()
    assert cfg.scale == 8
    assert cfg.degradation_config().scale == 8
    assert cfg.model_config().num_change_classes == cfg.data.num_classes


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError, match="mystery"):
        config_from_dict({"mystery": 1})


def test_unknown_section_key_rejected():
    with pytest.raises(ConfigError, match="p_meen"):
        config_from_dict({"sigma": {"p_meen": -1.2}})
    with pytest.raises(ConfigError, match="degradation"):
        config_from_dict({"degradation": {"blur_power": 3}})


def test_section_value_validation_propagates():
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"learning_rate": -1.0}})
    with pytest.raises(ConfigError):
        config_from_dict({"degradation_preset": "imaginary"})


def test_lists_become_tuples():
    cfg = config_from_dict({"denoiser": {"channel_mult": [1, 2], "attn_levels": [1]}})
    assert cfg.denoiser.channel_mult == (1, 2)


def test_degradation_overrides_apply():
    cfg = config_from_dict(
        {"degradation_preset": "bicubic", "degradation": {"noise_std_range": [0.01, 0.01]}}
    )
    dc = cfg.degradation_config()
    assert dc.noise_std_range == (0.01, 0.01)
    assert dc.blur_weights == {"none": 1.0}


def test_switches_projected_into_model_config():
    cfg = config_from_dict({"train": {"use_ref": False, "ref_texture_sft": False,
                                      "semantic_sft": False, "use_mask": False}})
    mcfg = cfg.model_config()
    assert mcfg.use_ref is False and mcfg.use_mask is False
    assert mcfg.in_channels == 6


def test_load_config_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_config_hash_stable_and_sensitive():
    a = config_from_dict({"seed": 1})
    b = config_from_dict({"seed": 1})
    c = config_from_dict({"seed": 2})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_resolve_out_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv("CHANGESR_OUT_ROOT", str(tmp_path))
    assert resolve_out_dir("x", "d") == tmp_path / "x"
    assert resolve_out_dir(None, "d") == tmp_path / "d"
    assert resolve_out_dir(str(tmp_path / "abs"), "d") == tmp_path / "abs"
