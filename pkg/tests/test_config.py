import numpy as np
import pytest

from shortcutvc import arrays
from shortcutvc.config import (
    DATA_ROOT_ENV,
    apply_overrides,
    decoder_configs,
    load_config,
    resolve_path,
    sampler_config,
    world_config,
)
from shortcutvc.errors import ConfigurationError, FormatError
from shortcutvc.sampler import SamplerMode


def test_overrides_parse_toml_literals():
    cfg = apply_overrides({}, ["a.b=3", "a.c=0.5", "d=true", "e=hello", "f=[1, 2]"])
    assert cfg == {"a": {"b": 3, "c": 0.5}, "d": True, "e": "hello", "f": [1, 2]}
    with pytest.raises(ConfigurationError):
        apply_overrides({}, ["novalue"])


def test_file_then_overrides(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('[world]\nn_speakers = 8\n\n[sampler]\nnfe = 4\nmode = "euler"\n')
    cfg = load_config(p, ["world.n_train=50"])
    wc = world_config(cfg, seed=3)
    assert (wc.n_speakers, wc.n_train, wc.seed) == (8, 50, 3)
    sc = sampler_config(cfg)
    assert sc.nfe == 4 and sc.mode is SamplerMode.EULER_CFM
    assert sampler_config(cfg, nfe=2, mode="shortcut").mode is SamplerMode.SHORTCUT


def test_bad_config_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[world\n")
    with pytest.raises(ConfigurationError):
        load_config(bad)
    with pytest.raises(ConfigurationError):
        world_config({"world": {"bogus": 1}})
    with pytest.raises(ConfigurationError):
        decoder_configs({"decoder_model": {"model_dim": 30, "heads": 4}}, 33, 16)
    with pytest.raises(ConfigurationError):
        sampler_config({"sampler": {"mode": "rk4"}})


def test_data_root(monkeypatch, tmp_path):
    monkeypatch.setenv(DATA_ROOT_ENV, str(tmp_path))
    assert resolve_path("w") == tmp_path / "w"
    assert resolve_path("/abs/x") == resolve_path("/abs/x")
    monkeypatch.delenv(DATA_ROOT_ENV)
    assert str(resolve_path("w")) == "w"


def test_array_container_roundtrip_and_stability(tmp_path):
    data = {"b": np.arange(6, dtype=np.float32).reshape(2, 3), "a": np.array([1, 2], dtype=np.int64)}
    meta = {"z": 1, "a": [1, 2]}
    blob = arrays.dumps(data, meta)
    assert arrays.dumps(data, meta) == blob
    back, m = arrays.loads(blob)
    assert m == meta
    for k in data:
        np.testing.assert_array_equal(back[k], data[k])
    with pytest.raises(FormatError):
        arrays.loads(b"\x00\x01")
    with pytest.raises(FormatError):
        arrays.dumps({"__meta__": np.zeros(1)})
