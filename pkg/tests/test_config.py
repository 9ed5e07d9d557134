import json

import pytest

from reft.config import ConfigError, ExperimentConfig, parse_config, parse_config_text

MINIMAL = '{"clients": [{"id": "a", "gflops": 10}], "f_lambda_gflops": 100}'


def test_minimal_config_defaults():
    cfg = parse_config_text(MINIMAL)
    assert cfg.partition.alpha == 1.0
    assert cfg.cost.bits == 32
    assert cfg.distill.temperature == 4.0
    assert cfg.distill.steps == 200
    assert cfg.strategy == "reft" and cfg.model == "cnn-small"
    assert cfg.partition.min_shard == max(2 * cfg.train.batch_size, 32)
    assert cfg.f_lambda == 100e9


def test_round_trip_is_identical(tmp_path):
    cfg = parse_config_text(MINIMAL)
    path = tmp_path / "resolved.json"
    path.write_text(cfg.dumps())
    again = parse_config(path)
    assert again == cfg
    assert again.dumps() == cfg.dumps()


@pytest.mark.parametrize("value", [0, -5])
def test_non_positive_f_lambda_rejected(value):
    with pytest.raises(ConfigError, match="f_lambda_gflops"):
        parse_config_text(MINIMAL.replace("100", str(value)))


def test_every_violation_listed_with_lines():
    text = '{\n  "clients": [{"id": "a", "gflops": -1}],\n  "f_lambda_gflops": 0,\n  "bogus": 1,\n  "model": "alexnet"\n}'
    with pytest.raises(ConfigError) as info:
        parse_config_text(text, "x.json")
    problems = info.value.problems
    assert len(problems) == 4
    assert any(p.startswith("line 2: clients.0.gflops") for p in problems)
    assert any(p.startswith("line 3: f_lambda_gflops") for p in problems)
    assert any(p.startswith("line 4: bogus") for p in problems)
    assert any(p.startswith("line 5: model") for p in problems)
    assert "x.json" in str(info.value)


def test_unknown_nested_keys_rejected():
    with pytest.raises(ConfigError, match="train.lr"):
        parse_config_text('{"clients": [{"id": "a", "gflops": 1}], "f_lambda_gflops": 1, "train": {"lr": 1}}')


def test_cross_field_rules():
    with pytest.raises(ConfigError, match="needs f_lambda_gflops"):
        parse_config_text('{"clients": [{"id": "a", "gflops": 1}]}')
    parse_config_text('{"strategy": "fedavg", "clients": [{"id": "a", "gflops": 1}]}')
    with pytest.raises(ConfigError, match="unique"):
        parse_config_text('{"clients": [{"id": "a", "gflops": 1}, {"id": "a", "gflops": 2}], "f_lambda_gflops": 1}')
    with pytest.raises(ConfigError, match="lr_max"):
        parse_config_text('{"clients": [{"id": "a", "gflops": 1}], "f_lambda_gflops": 1, "train": {"lr_max": 0.001, "lr_min": 0.01}}')
    with pytest.raises(ConfigError, match="train_path"):
        parse_config_text('{"clients": [{"id": "a", "gflops": 1}], "f_lambda_gflops": 1, "dataset": {"kind": "raw"}}')


def test_bad_json_and_top_level():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text('{\n  "clients": ,\n}')
    with pytest.raises(ConfigError, match="JSON object"):
        parse_config_text("[]")


def test_overrides_and_profiles():
    cfg = parse_config_text(MINIMAL, overrides={"seed": 9})
    assert cfg.seed == 9 and cfg.dataset_seed == 9
    (p,) = cfg.profiles()
    assert p.client_id == "a" and p.flops == 10e9


def test_config_is_frozen():
    cfg = parse_config_text(MINIMAL)
    with pytest.raises(Exception):
        cfg.seed = 3
    assert isinstance(cfg, ExperimentConfig)
    json.loads(cfg.dumps())
