"""Run-config parsing: defaults, overrides, strict unknown-key rejection."""

import json

import pytest

from emomatch.dae import DAEConfig
from emomatch.training import ConfigError, TrainConfig, load_run_config, parse_run_config


def test_empty_config_resolves_to_defaults():
    cfg = parse_run_config({})
    assert cfg.train.mode == "fully"
    assert cfg.train.batch_size == 128
    assert cfg.train.lr == 1e-3
    assert cfg.train.weights.alpha == 0.2
    assert cfg.train.weights.beta == 0.1
    assert cfg.train.weights.omega == 0.3
    assert cfg.train.dae == DAEConfig.toy()


def test_unknown_keys_rejected_at_every_level():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_run_config({"trian": {}})
    with pytest.raises(ConfigError, match="unknown key"):
        parse_run_config({"train": {"learning_rate": 0.1}})
    with pytest.raises(ConfigError, match="unknown key"):
        parse_run_config({"weights": {"gamma": 0.5}})
    with pytest.raises(ConfigError, match="unknown key"):
        parse_run_config({"paths": {"output": "x"}})


def test_sections_override_defaults():
    cfg = parse_run_config({
        "train": {"mode": "semi", "batch_size": 50, "seed": 7, "modalities": ["a", "l"]},
        "weights": {"omega": 0.5},
        "dae": {"preset": "toy", "latent_dim": 8},
        "paths": {"manifest": "data/manifest.json", "out": "outdir"},
    })
    assert cfg.train.mode == "semi"
    assert cfg.train.modalities == ("acoustic", "lexical")
    assert cfg.train.weights.omega == 0.5
    assert cfg.train.dae.latent_dim == 8
    assert cfg.manifest_path == "data/manifest.json"
    assert cfg.out_dir == "outdir"


def test_dae_presets():
    assert parse_run_config({"dae": {"preset": "paper"}}).train.dae == DAEConfig.paper()
    with pytest.raises(ConfigError, match="preset"):
        parse_run_config({"dae": {"preset": "huge"}})


def test_semi_mode_needs_two_modalities():
    with pytest.raises(ConfigError, match="two modalities"):
        TrainConfig(mode="semi", modalities=("acoustic",))


def test_matching_needs_acoustic_anchor():
    with pytest.raises(ConfigError, match="acoustic"):
        TrainConfig(modalities=("visual", "lexical"))
    # fine with beta disabled
    TrainConfig(modalities=("visual", "lexical"),
                weights=__import__("emomatch.objective", fromlist=["LossWeights"]).LossWeights(0.2, 0.0, 0.0))


def test_modality_aliases_and_duplicates():
    cfg = TrainConfig(modalities=("V", "a"), weights=__import__("emomatch.objective", fromlist=["LossWeights"]).LossWeights(0, 0, 0))
    assert cfg.modalities == ("acoustic", "visual")
    with pytest.raises(ConfigError, match="duplicate"):
        TrainConfig(modalities=("a", "acoustic"))


def test_load_run_config_roundtrip(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"train": {"seed": 3}}))
    cfg = load_run_config(path)
    assert cfg.train.seed == 3
    echoed = cfg.to_dict()
    again = parse_run_config(json.loads(json.dumps(echoed)))
    assert again.to_dict() == echoed


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_run_config(bad)
