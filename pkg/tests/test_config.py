import json

import pytest

from transdepth.config import ModelConfig, RunConfig, load_config, parse_config
from transdepth.errors import ConfigError


def test_defaults():
    cfg = RunConfig()
    assert cfg.training.lr == 1e-4 and cfg.training.weight_decay == 0.01
    assert cfg.training.batch_size == 2 and cfg.training.steps == 500 and cfg.training.seed == 42
    assert cfg.model.backbone.stage_channels == [16, 32, 64, 128, 256]
    t = cfg.model.transformer
    assert (t.num_layers, t.hidden, t.num_heads, t.head_dim, t.mlp_ratio, t.patch_kernel) == (2, 32, 4, 8, 2.0, 1)
    assert t.insertion == "f5" and t.insertion_scale == 5
    assert cfg.model.agd.receiving_scale == 5 and cfg.model.agd.emitting_scales == [3, 4, 5]
    assert cfg.model.loss.lam == 0.85 and cfg.model.loss.alpha == 10.0
    assert (cfg.data.image_h, cfg.data.image_w, cfg.data.n_train) == (64, 64, 8)


@pytest.mark.parametrize(
    "payload",
    [
        {"model": {"nope": 1}},
        {"training": {"lr": 0}},
        {"training": {"steps": -1}},
        {"data": {"image_h": 48}},
        {"data": {"source": "directory"}},
        {"model": {"agd": {"emitting_scales": [6]}}},
        {"model": {"agd": {"emitting_scales": []}}},
        {"model": {"agd": {"kernel_size": 2}}},
        {"model": {"loss": {"min_depth": 5, "max_depth": 1}}},
        {"model": {"loss": {"lambda": 1.5}}},
        {"model": {"backbone": {"stage_channels": [1, 2, 3]}}},
        {"model": {"transformer": {"insertion": "f3"}}},
        {"model": {"head": {"channels": []}}},
        {"training": {"seed": 2**64}},
    ],
)
def test_invalid_configs_rejected(payload):
    with pytest.raises(ConfigError):
        parse_config(payload)


def test_lambda_alias_round_trip():
    cfg = parse_config({"model": {"loss": {"lambda": 1.0}}})
    assert cfg.model.loss.lam == 1.0
    assert cfg.to_json()["model"]["loss"]["lambda"] == 1.0
    assert parse_config(cfg.to_json()) == cfg


def test_emitting_scales_sorted():
    assert ModelConfig.model_validate({"agd": {"emitting_scales": [5, 3]}}).agd.emitting_scales == [3, 5]


def test_load_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"training": {"steps": 3}}))
    assert load_config(path).training.steps == 3
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(path)
