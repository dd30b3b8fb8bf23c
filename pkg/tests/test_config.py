import dataclasses
import json

import pytest

from trailspeed.config import ENV_VAR, ConfigError, PipelineConfig, load_config
from trailspeed.filtering import GridRegion


def test_round_trip_and_hash(tmp_path):
    cfg = PipelineConfig()
    path = tmp_path / "c.json"
    cfg.save(path)
    back = PipelineConfig.load(path)
    assert back == cfg
    assert back.hash() == cfg.hash() and len(cfg.hash()) == 64
    assert dataclasses.replace(cfg, seed=1).hash() != cfg.hash()


def test_nested_override(tmp_path):
    d = PipelineConfig().to_dict()
    d["fitting"]["alpha"] = 0.01
    d["breaks"] = {"min_consecutive": 12}
    cfg = PipelineConfig.from_dict(d)
    assert cfg.fitting.alpha == 0.01
    assert cfg.breaks.min_consecutive == 12 and cfg.breaks.min_nonconsecutive == 5
    assert isinstance(cfg.region, GridRegion)


def test_partial_file_keeps_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 7}))
    cfg = PipelineConfig.load(p)
    assert cfg.seed == 7 and cfg.filters == PipelineConfig().filters


@pytest.mark.parametrize(
    "doc",
    [
        {"sede": 1},
        {"fitting": {"alpha": "small"}},
        {"seed": 1.5},
        {"seed": True},
        {"exclude_region": 1},
        {"fitting": []},
        {"terrain": {"lidar": [["a.asc"]]}},
    ],
)
def test_bad_documents_raise(doc):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(doc)


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        PipelineConfig.load(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        PipelineConfig.load(bad)


def test_env_var_fallback(tmp_path, monkeypatch):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 42}))
    monkeypatch.delenv(ENV_VAR, raising=False)
    assert load_config() == PipelineConfig()
    monkeypatch.setenv(ENV_VAR, str(p))
    assert load_config().seed == 42
    other = tmp_path / "d.json"
    other.write_text(json.dumps({"seed": 3}))
    assert load_config(other).seed == 3
