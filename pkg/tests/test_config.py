import json

import pytest
import yaml

from dualrank import config as C


def test_defaults_validate():
    cfg = C.build_config(environ={})
    assert cfg["dataset"]["pool_size"] == 64 and cfg["dataset"]["k"] == 4
    assert C.trainer_config(cfg).clip_high == 0.28
    assert C.sampling(cfg, "evaluation").top_k == 20
    assert C.limits(cfg).wall_timeout == 10.0


def test_layer_precedence(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"seed": 1, "dataset": {"k": 3, "strategy": "sequential"}}))
    cfg = C.build_config(path, {"dataset.k": 5}, {"DUALRANK_DATASET__STRATEGY": "shuffled"})
    assert cfg["seed"] == 1 and cfg["dataset"]["k"] == 5 and cfg["dataset"]["strategy"] == "shuffled"
    cfg = C.build_config(path, {"dataset.k": 5}, {"DUALRANK_DATASET__K": "6", "DUALRANK_SEED": "4"})
    assert cfg["dataset"]["k"] == 6 and cfg["seed"] == 4


def test_json_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"reward": {"kind": "ndcg"}}))
    assert C.reward_spec(C.build_config(path, environ={})).kind == "ndcg"


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("dataset:\n  kk: 3\n")
    with pytest.raises(C.ConfigError):
        C.build_config(path, environ={})
    with pytest.raises(C.ConfigError):
        C.build_config(flags={"nope.x": 1}, environ={})


def test_invalid_values_rejected():
    for flags in ({"dataset.k": 1}, {"reward.kind": "bogus"}, {"trainer.clip_low": 0.5},
                  {"sandbox.wall_timeout": 0.01}, {"eval.n": 0}, {"gateway.evaluation.top_p": 0.0}):
        with pytest.raises(C.ConfigError):
            C.build_config(flags=flags, environ={})


def test_coerce():
    assert C.coerce("true", False) is True
    assert C.coerce("3", 0) == 3
    assert C.coerce("0.5", 1.0) == 0.5
    assert C.coerce("python3 -I", ["python3"]) == ["python3", "-I"]
    assert C.coerce('["a", "b c"]', ["x"]) == ["a", "b c"]
    assert C.coerce("null", None) is None
    with pytest.raises(C.ConfigError):
        C.coerce("maybe", True)


def test_echoed_config_reloads_identically(tmp_path):
    cfg = C.build_config(flags={"seed": 9, "trainer.learning_rate": 0.1}, environ={})
    path = tmp_path / "echo.json"
    path.write_text(json.dumps(cfg))
    assert C.build_config(path, environ={}) == cfg


def test_endpoint_requires_url_and_model():
    with pytest.raises(C.ConfigError):
        C.endpoint(C.build_config(environ={}))
    cfg = C.build_config(flags={"gateway.base_url": "http://x", "gateway.model": "m"}, environ={})
    assert C.endpoint(cfg).model_name == "m" and C.endpoint(cfg, "other").model_name == "other"
