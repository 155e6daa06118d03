import json

import pytest
from hypothesis import given, strategies as st

from sparsemvn.config import (CONFIG_TYPES, SCHEMA_VERSION, FitExposureConfig, SimulateConfig,
                              canonical_json, config_hash, config_to_dict, parse_config)
from sparsemvn.errors import InvalidParameter, IoError, ParseError


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("")
    for kind, cls in CONFIG_TYPES.items():
        cfg = parse_config(kind, p)
        assert cfg == cls() and cfg.schema_version == SCHEMA_VERSION


def test_schedule_override():
    cfg = parse_config("fit-health", None, {"schedule": "10000,2000,5"})
    assert cfg.schedule == "10000,2000,5"
    with pytest.raises(InvalidParameter):
        parse_config("fit-health", None, {"schedule": "10,0,5"})


def test_validation_errors():
    with pytest.raises(InvalidParameter):
        parse_config("fit-exposure", None, {"sigma_k": -0.4})
    with pytest.raises(InvalidParameter, match="unknown"):
        parse_config("simulate", None, {"n_why": 3})
    with pytest.raises(InvalidParameter):
        parse_config("simulate", None, {"methods": "plugin,banded"})
    with pytest.raises(InvalidParameter):
        parse_config("simulate", None, {"schema_version": 99})
    with pytest.raises(InvalidParameter):
        parse_config("bench-vecchia", None, {"domain": "2x3"})
    with pytest.raises(InvalidParameter):
        parse_config("fit-health", None, {"prior": "sparse:0"})


def test_json_errors_carry_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "n_y": 10,\n  oops\n}')
    with pytest.raises(ParseError) as exc:
        parse_config("simulate", p)
    assert exc.value.line == 3
    with pytest.raises(IoError):
        parse_config("simulate", tmp_path / "missing.json")


def test_file_then_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"n_y": 100, "seed": 4}))
    cfg = parse_config("simulate", p, {"seed": 9, "out": None})
    assert (cfg.n_y, cfg.seed, cfg.out) == (100, 9, "results")


def test_methods_string_normalized():
    cfg = SimulateConfig(methods="plugin, sparse:5")
    assert cfg.methods == ["plugin", "sparse:5"]


@given(n_y=st.integers(1, 5000), seed=st.integers(0, 2**31), reps=st.integers(1, 500),
       methods=st.lists(st.sampled_from(["plugin", "independent", "sparse:3", "dense"]),
                        min_size=1, max_size=4))
def test_config_roundtrip(n_y, seed, reps, methods):
    cfg = SimulateConfig(n_y=n_y, seed=seed, replicates=reps, methods=methods)
    text = canonical_json(config_to_dict(cfg))
    again = parse_config("simulate", None, json.loads(text))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)


def test_grid_validation():
    FitExposureConfig(grid=[[0.0, 0.0], [1.0, 1.0]])
    with pytest.raises(InvalidParameter):
        FitExposureConfig(grid=[[0.0, 0.0, 1.0]])
