"""Checkpoint container shared by the duration model, the denoiser and the toy field."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import arrays
from .errors import FormatError

FORMAT_VERSION = 1
REQUIRED = ("format_version", "kind", "model_config", "step")


@dataclass
class Checkpoint:
    kind: str
    model_config: dict
    state_dict: dict
    step: int = 0
    train_config: dict = field(default_factory=dict)
    optimizer_state: dict | None = None
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)


def _optimizer_arrays(opt: torch.optim.Optimizer):
    sd = opt.state_dict()
    out = {}
    for pid, st in sd["state"].items():
        for key, val in st.items():
            out[f"optim.{pid}.{key}"] = val.detach().cpu() if torch.is_tensor(val) else torch.tensor(val)
    groups = [{k: v for k, v in g.items()} for g in sd["param_groups"]]
    for g in groups:
        if "betas" in g:
            g["betas"] = list(g["betas"])
    return out, groups


def to_bytes(ckpt: Checkpoint) -> bytes:
    named = {f"model.{k}": v.detach().cpu().contiguous() for k, v in ckpt.state_dict.items()}
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": ckpt.kind,
        "model_config": ckpt.model_config,
        "train_config": ckpt.train_config,
        "step": int(ckpt.step),
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
    }
    if ckpt.optimizer_state is not None:
        named.update(ckpt.optimizer_state["arrays"])
        meta["optimizer"] = {"param_groups": ckpt.optimizer_state["param_groups"]}
    return arrays.dumps({k: named[k] for k in sorted(named)}, meta)


def from_bytes(data: bytes) -> Checkpoint:
    arrs, meta = arrays.loads(data)
    missing = [k for k in REQUIRED if k not in meta]
    if missing:
        raise FormatError(f"checkpoint lacks fields {missing}")
    if meta["format_version"] != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {meta['format_version']}")
    state = {k[len("model."):]: torch.from_numpy(v.copy()) for k, v in arrs.items() if k.startswith("model.")}
    if not state:
        raise FormatError("checkpoint holds no model weights")
    opt = None
    if "optimizer" in meta:
        opt = {"arrays": {k: torch.from_numpy(v.copy()) for k, v in arrs.items() if k.startswith("optim.")},
               "param_groups": meta["optimizer"]["param_groups"]}
    return Checkpoint(meta["kind"], meta["model_config"], state, meta["step"], meta.get("train_config") or {},
                      opt, meta.get("rng_state"), meta.get("extra") or {})


def save(path, ckpt: Checkpoint) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(to_bytes(ckpt))


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing checkpoint: {path}")
    return from_bytes(path.read_bytes())


def capture(kind, model, model_config: dict, step: int, optimizer=None, rng: np.random.Generator | None = None,
            train_config: dict | None = None, extra: dict | None = None) -> Checkpoint:
    opt_state = None
    if optimizer is not None:
        arrs, groups = _optimizer_arrays(optimizer)
        opt_state = {"arrays": arrs, "param_groups": groups}
    return Checkpoint(kind, model_config, {k: v.detach().clone() for k, v in model.state_dict().items()}, step,
                      train_config or {}, opt_state, None if rng is None else rng.bit_generator.state, extra or {})


def restore_optimizer(optimizer: torch.optim.Optimizer, ckpt: Checkpoint) -> None:
    if ckpt.optimizer_state is None:
        raise FormatError("checkpoint has no optimizer state")
    state: dict = {}
    for name, val in ckpt.optimizer_state["arrays"].items():
        _, pid, key = name.split(".", 2)
        state.setdefault(int(pid), {})[key] = val.clone()
    groups = []
    for g in ckpt.optimizer_state["param_groups"]:
        g = dict(g)
        if "betas" in g:
            g["betas"] = tuple(g["betas"])
        groups.append(g)
    optimizer.load_state_dict({"state": state, "param_groups": groups})


def restore_rng(ckpt: Checkpoint) -> np.random.Generator:
    if ckpt.rng_state is None:
        raise FormatError("checkpoint has no random state")
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state
    return rng
