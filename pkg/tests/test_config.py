import json

import pytest

from replaynet.config import ConfigError, RunConfig, flatten, from_flat, load_config
from replaynet.model import VARIANTS


def test_seed_is_required():
    with pytest.raises(ConfigError, match="seed"):
        from_flat({"epochs": 3})
    with pytest.raises(ConfigError, match="seed"):
        load_config(None, {"seed": None})
    with pytest.raises(ConfigError, match="seed"):
        RunConfig(seed="1")


def test_nested_and_dotted_keys_agree(tmp_path):
    nested = {"seed": 4, "optim": {"learning_rate": 0.003}, "model": {"cell": "gru"}, "time": {"scale": "day"}}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(nested))
    a = load_config(p)
    b = from_flat(flatten(nested))
    c = from_flat({"seed": 4, "optim.learning_rate": 0.003, "model.cell": "gru", "time.scale": "day"})
    assert a == b == c
    assert a.optim.learning_rate == 0.003 and a.cell == "gru" and a.scheme.timestamp_count == 24


def test_flags_override_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 1, "epochs": 5, "variant": "noste"}))
    cfg = load_config(p, {"epochs": 2, "variant": None, "seed": 9})
    assert (cfg.seed, cfg.epochs, cfg.variant) == (9, 2, "noste")


def test_unknown_key_names_itself():
    with pytest.raises(ConfigError, match="optim.momentum"):
        from_flat({"seed": 0, "optim.momentum": 0.9})


@pytest.mark.parametrize("flat,key", [
    ({"seed": 0, "epochs": 1.5}, "epochs"),
    ({"seed": 0, "variant": "best"}, "variant"),
    ({"seed": 0, "time.granularity": "second"}, "time"),
    ({"seed": 0, "train_fraction": 1.0}, "train_fraction"),
    ({"seed": 0, "model.use_ste": "maybe"}, "model.use_ste"),
])
def test_invalid_values_name_the_key(flat, key):
    with pytest.raises(ConfigError, match=key):
        from_flat(flat)


def test_bad_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_variant_aliases_map_to_flags(variant):
    mc = RunConfig(seed=0, variant=variant).model_config(10, 3)
    expected = dict(use_ste=False, use_query_time=False, fixed_bandwidth=None, multi_granularity=False)
    expected.update(VARIANTS[variant])
    for k, v in expected.items():
        assert getattr(mc, k) == v
    assert mc.variant == variant


def test_variant_table():
    assert VARIANTS["replay"] == dict(use_ste=True, use_query_time=True)
    assert VARIANTS["noste"] == dict(use_ste=False, use_query_time=True)
    assert VARIANTS["noqt"] == dict(use_ste=True, use_query_time=False)
    assert VARIANTS["flashback"] == dict(use_ste=False, use_query_time=False)
    assert VARIANTS["fixedb"]["fixed_bandwidth"] is not None
    assert VARIANTS["multig"]["multi_granularity"]


def test_flag_overrides_and_invalid_combination():
    cfg = from_flat({"seed": 0, "variant": "replay", "model.use_query_time": "false"})
    assert cfg.model_config(5, 2).variant == "noqt"
    with pytest.raises(ConfigError, match="model"):
        from_flat({"seed": 0, "variant": "fixedb", "model.use_ste": False}).model_config(5, 2)


def test_to_flat_round_trip():
    cfg = from_flat({"seed": 3, "variant": "fixedb", "model.fixed_bandwidth": 2.0, "flashback.window": 10,
                     "optim.weight_decay": 1e-4, "model.use_query_time": False, "data": "x.csv"})
    assert from_flat(cfg.to_flat()) == cfg
