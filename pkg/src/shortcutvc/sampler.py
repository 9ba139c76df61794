"""ODE sampling for shortcut and vanilla flow-matching fields, with classifier-free guidance."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch

from .errors import InvalidArgumentError


class SamplerMode(str, Enum):
    SHORTCUT = "shortcut"
    EULER_CFM = "euler"


@dataclass
class SamplerConfig:
    nfe: int = 2
    alpha: float = 0.7
    mode: SamplerMode = SamplerMode.SHORTCUT
    n_base: int = 128

    def __post_init__(self):
        self.mode = SamplerMode(self.mode)
        if self.nfe < 1:
            raise InvalidArgumentError(f"nfe must be positive, got {self.nfe}")
        if self.alpha < 0:
            raise InvalidArgumentError(f"alpha must be non-negative, got {self.alpha}")
        if self.mode is SamplerMode.SHORTCUT and (self.nfe > self.n_base or self.n_base % self.nfe or self.nfe & (self.nfe - 1)):
            raise InvalidArgumentError(f"shortcut sampling needs a power-of-two nfe dividing {self.n_base}, got {self.nfe}")


def cfg_combine(f_cond, f_null, alpha: float):
    """Guided prediction ``f_cond + alpha * (f_cond - f_null)``."""
    if f_cond.shape != f_null.shape:
        raise InvalidArgumentError(f"shape mismatch: {tuple(f_cond.shape)} vs {tuple(f_null.shape)}")
    return f_cond + alpha * (f_cond - f_null)


def _guided(model, x, t, d, cond, alpha):
    B = x.shape[0]
    tt = torch.full((B,), t, dtype=x.dtype, device=x.device)
    dd = torch.full((B,), d, dtype=x.dtype, device=x.device)
    f_cond = model(x, tt, dd, cond)
    if cond is None or not hasattr(cond, "as_null") or alpha == 0:
        return f_cond
    return cfg_combine(f_cond, model(x, tt, dd, cond.as_null()), alpha)


def _initial_noise(cond, shape, rng, like, x0):
    if x0 is not None:
        return x0
    return torch.as_tensor(rng.standard_normal(_shape_from(cond, shape)), dtype=like.dtype, device=like.device)


def _reference_tensor(model):
    try:
        return next(model.parameters())
    except (AttributeError, StopIteration):
        return torch.zeros((), dtype=torch.float32)


def overwrite_prompt(x, cond):
    """Replace prompt frames in ``x`` with the given context frames."""
    pm = getattr(cond, "prompt_mask", None)
    if pm is None:
        return x
    return torch.where(pm[..., None], cond.context, x)


def _shape_from(cond, shape):
    if shape is not None:
        return tuple(shape)
    if cond is not None and hasattr(cond, "context"):
        return tuple(cond.context.shape)
    raise InvalidArgumentError("sample shape is required when the condition carries no context")


@torch.no_grad()
def shortcut_sample(model, cond, cfg: SamplerConfig, rng: np.random.Generator, shape=None, x0=None, times=None):
    """Integrate the shortcut field in ``cfg.nfe`` equal steps of size ``1 / nfe``.

    If ``times`` is a list, the query times are appended to it.
    """
    if cfg.mode is not SamplerMode.SHORTCUT:
        raise InvalidArgumentError("shortcut_sample requires SHORTCUT mode")
    ref = _reference_tensor(model)
    x = _initial_noise(cond, shape, rng, ref, x0)
    d = 1.0 / cfg.nfe
    for i in range(cfg.nfe):
        t = i * d
        if times is not None:
            times.append(t)
        x = x + _guided(model, x, t, d, cond, cfg.alpha) * d
    return overwrite_prompt(x, cond)


@torch.no_grad()
def euler_cfm_sample(model, cond, steps: int, alpha: float, rng: np.random.Generator, shape=None, x0=None):
    """Euler integration of the ``d = 0`` field with uniform step ``1 / steps``."""
    if steps < 1:
        raise InvalidArgumentError(f"steps must be positive, got {steps}")
    ref = _reference_tensor(model)
    x = _initial_noise(cond, shape, rng, ref, x0)
    h = 1.0 / steps
    for i in range(steps):
        x = x + _guided(model, x, i * h, 0.0, cond, alpha) * h
    return overwrite_prompt(x, cond)


def sample(model, cond, cfg: SamplerConfig, rng: np.random.Generator, shape=None, x0=None):
    if cfg.mode is SamplerMode.SHORTCUT:
        return shortcut_sample(model, cond, cfg, rng, shape=shape, x0=x0)
    return euler_cfm_sample(model, cond, cfg.nfe, cfg.alpha, rng, shape=shape, x0=x0)
