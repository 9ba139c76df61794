"""Declarative run configuration: a TOML file with nested sections plus ``--set`` overrides."""

from __future__ import annotations

import copy
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from .denoiser import DiTConfig
from .duration import DurationModelConfig
from .errors import ConfigurationError
from .sampler import SamplerConfig, SamplerMode
from .synth import WorldConfig
from .toy2d import Toy2DConfig
from .train import DecoderTrainConfig, DurationTrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DATA_ROOT_ENV = "SHORTCUTVC_DATA_ROOT"

# Small enough to train on a laptop CPU in minutes.
DESK_DEFAULTS: dict = {
    "world": {},
    "duration_model": {},
    "duration_train": {"lr": 1e-3, "warmup_steps": 100, "total_steps": 600, "batch_size": 16},
    "decoder_model": {},
    "decoder_train": {"lr": 1e-3, "warmup_steps": 200, "total_steps": 3000, "batch_size": 16},
    "sampler": {"nfe": 2, "alpha": 0.7, "mode": "shortcut"},
    "eval": {"n_pairs": 300, "decode_iters": 10, "prompt_units": 24, "batch_size": 16},
    "toy2d": {},
}


def _parse_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as TOML literals, else kept as strings."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = cfg
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {key!r} descends into a non-section")
        node[parts[-1]] = _parse_value(raw.strip())
    return cfg


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None) -> dict:
    cfg = DESK_DEFAULTS
    if path is not None:
        try:
            with open(path, "rb") as fh:
                cfg = _merge(cfg, tomllib.load(fh))
        except FileNotFoundError as e:
            raise ConfigurationError(f"config file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"{path}: {e}") from e
    return apply_overrides(cfg, overrides)


def _build(cls, section: dict, name: str, **extra):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigurationError(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**{**section, **extra})
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"[{name}]: {e}") from e


def world_config(cfg: dict, seed: int | None = None) -> WorldConfig:
    extra = {} if seed is None else {"seed": seed}
    return _build(WorldConfig, cfg.get("world", {}), "world", **extra)


def duration_configs(cfg: dict, vocab: int, seed: int | None = None):
    model = _build(DurationModelConfig, {"n_units": vocab, **cfg.get("duration_model", {})}, "duration_model")
    extra = {} if seed is None else {"seed": seed}
    return model, _build(DurationTrainConfig, cfg.get("duration_train", {}), "duration_train", **extra)


def decoder_configs(cfg: dict, vocab: int, channels: int, seed: int | None = None):
    model = _build(DiTConfig, {"n_units": vocab, "channels": channels, **cfg.get("decoder_model", {})}, "decoder_model")
    extra = {} if seed is None else {"seed": seed}
    return model, _build(DecoderTrainConfig, cfg.get("decoder_train", {}), "decoder_train", **extra)


def sampler_config(cfg: dict, nfe=None, alpha=None, mode=None) -> SamplerConfig:
    s = dict(cfg.get("sampler", {}))
    if nfe is not None:
        s["nfe"] = nfe
    if alpha is not None:
        s["alpha"] = alpha
    if mode is not None:
        s["mode"] = mode
    if "mode" in s:
        try:
            s["mode"] = SamplerMode(s["mode"])
        except ValueError as e:
            raise ConfigurationError(f"unknown sampler mode {s['mode']!r}") from e
    return _build(SamplerConfig, s, "sampler")


def toy2d_config(cfg: dict, seed: int | None = None) -> Toy2DConfig:
    extra = {} if seed is None else {"seed": seed}
    return _build(Toy2DConfig, cfg.get("toy2d", {}), "toy2d", **extra)


def resolve_path(p) -> Path:
    """Relative paths resolve against ``$SHORTCUTVC_DATA_ROOT`` when it is set."""
    p = Path(p)
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def snapshot(obj) -> dict:
    d = asdict(obj)
    return {k: (v.value if hasattr(v, "value") else v) for k, v in d.items()}
