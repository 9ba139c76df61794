"""Shortcut flow-matching objective.

A shortcut field ``s(x, t, d)`` is a velocity network that also sees the step
size ``d``. It is trained with two terms on a split batch: plain OT-CFM
regression at ``d = 0`` and a self-consistency term asking one step of size
``2d`` to match two consecutive steps of size ``d``.

Fields are called as ``model(x, t, d, cond)`` with ``t`` and ``d`` of shape
``(B,)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
import torch

from .errors import InvalidArgumentError


class Branch(IntEnum):
    FM = 0
    CONSISTENCY = 1


@dataclass(frozen=True)
class TimeGrid:
    n_base: int = 128

    def __post_init__(self):
        if self.n_base < 1 or self.n_base & (self.n_base - 1):
            raise InvalidArgumentError(f"n_base must be a power of two, got {self.n_base}")

    @property
    def levels(self) -> int:
        return int(math.log2(self.n_base)) + 1

    @property
    def d_values(self) -> tuple[float, ...]:
        return tuple(2.0**i / self.n_base for i in range(self.levels))

    def step_index(self, d) -> np.ndarray:
        """Map step sizes to integer ids: 0 for ``d = 0``, ``1 + log2(d * n_base)`` otherwise."""
        d = np.asarray(d, dtype=np.float64)
        scaled = d * self.n_base
        out = np.zeros(d.shape, dtype=np.int64)
        pos = scaled > 0
        lg = np.log2(np.where(pos, scaled, 1.0))
        ok = np.isclose(lg, np.round(lg), atol=1e-9) & (np.round(lg) >= 0) & (np.round(lg) < self.levels)
        if np.any(pos & ~ok) or np.any(d < 0):
            raise InvalidArgumentError(f"step size not on the 1/{self.n_base} power-of-two grid: {d[pos & ~ok]}")
        out[pos] = 1 + np.round(lg[pos]).astype(np.int64)
        return out


@dataclass
class SCFMConfig:
    k: float = 0.7
    sigma_min: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.k <= 1.0:
            raise InvalidArgumentError(f"k must lie in (0, 1], got {self.k}")
        if not 0.0 <= self.sigma_min < 1.0:
            raise InvalidArgumentError(f"sigma_min must lie in [0, 1), got {self.sigma_min}")

    def split(self, batch_size: int) -> tuple[int, int]:
        n_fm = math.ceil(self.k * batch_size - 1e-9)
        return n_fm, batch_size - n_fm


@dataclass
class ShortcutBatch:
    x0: torch.Tensor
    x1: torch.Tensor
    t: torch.Tensor
    d: torch.Tensor
    branch: torch.Tensor

    def __len__(self):
        return self.x0.shape[0]


def _bcast(t: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    if not isinstance(t, torch.Tensor):
        return torch.as_tensor(t, dtype=x.dtype, device=x.device)
    return t.to(x.dtype).reshape(-1, *([1] * (x.ndim - 1)))


def ot_interpolate(x0, x1, t, sigma_min: float = 0.0):
    """``(1 - (1 - sigma_min) t) x0 + t x1``."""
    if x0.shape != x1.shape:
        raise InvalidArgumentError(f"shape mismatch: {tuple(x0.shape)} vs {tuple(x1.shape)}")
    t = _bcast(t, x0)
    return (1 - (1 - sigma_min) * t) * x0 + t * x1


def fm_target(x0, x1, sigma_min: float = 0.0):
    """Velocity of the OT path, ``x1 - (1 - sigma_min) x0``."""
    if x0.shape != x1.shape:
        raise InvalidArgumentError(f"shape mismatch: {tuple(x0.shape)} vs {tuple(x1.shape)}")
    return x1 - (1 - sigma_min) * x0


def sample_step_pair(grid: TimeGrid, rng: np.random.Generator, size=None):
    """Draw ``(t, d)`` for the consistency branch.

    ``d`` is uniform over the grid sizes below 1 (so ``2d <= 1``), ``t`` is
    uniform over the multiples of ``d`` in ``[0, 1 - 2d]``.
    """
    n = 1 if size is None else size
    level = rng.integers(0, grid.levels - 1, size=n)
    d_units = 2**level
    n_slots = grid.n_base // d_units - 1
    slot = (rng.random(n) * n_slots).astype(np.int64)
    t = slot * d_units / grid.n_base
    d = d_units / grid.n_base
    if size is None:
        return float(t[0]), float(d[0])
    return t, d


def sample_fm_times(grid: TimeGrid, rng: np.random.Generator, size: int) -> np.ndarray:
    """Uniform times on the grid ``{0, 1/n_base, ..., (n_base - 1)/n_base}``."""
    return rng.integers(0, grid.n_base, size=size) / grid.n_base


def take(cond, idx):
    """Select batch items from a conditioning object (None, tensor, or ``.take``-able)."""
    if cond is None:
        return None
    if isinstance(cond, torch.Tensor):
        return cond[idx]
    return cond.take(idx)


@torch.no_grad()
def consistency_target(model, x_t, t, d, cond=None):
    """Average of two consecutive shortcut steps of size ``d``, gradient-frozen."""
    t = torch.as_tensor(t, dtype=x_t.dtype, device=x_t.device).reshape(-1)
    d = torch.as_tensor(d, dtype=x_t.dtype, device=x_t.device).reshape(-1)
    if t.numel() == 1 and x_t.shape[0] > 1:
        t, d = t.expand(x_t.shape[0]), d.expand(x_t.shape[0])
    if torch.any(t + 2 * d > 1 + 1e-9):
        raise InvalidArgumentError("consistency target needs t + 2d <= 1")
    s1 = model(x_t, t, d, cond)
    x_mid = x_t + s1 * _bcast(d, x_t)
    s2 = model(x_mid, t + d, d, cond)
    return (s1 + s2) / 2


def make_shortcut_batch(x1, rng: np.random.Generator, cfg: SCFMConfig, grid: TimeGrid = TimeGrid()) -> ShortcutBatch:
    """Noise, times and step sizes for one training batch.

    The first ``ceil(k B)`` items form the flow-matching branch (``d = 0``),
    the rest the consistency branch. Random draws for the consistency branch
    happen only when it is non-empty, so ``k = 1`` consumes the generator
    exactly like :func:`make_cfm_batch`.
    """
    B = x1.shape[0]
    n_fm, n_sc = cfg.split(B)
    x0 = torch.as_tensor(rng.standard_normal(x1.shape), dtype=x1.dtype, device=x1.device)
    t = sample_fm_times(grid, rng, B)
    d = np.zeros(B)
    if n_sc:
        t_sc, d_sc = sample_step_pair(grid, rng, n_sc)
        t[n_fm:], d[n_fm:] = t_sc, d_sc
    branch = torch.zeros(B, dtype=torch.long)
    branch[n_fm:] = Branch.CONSISTENCY
    as_t = lambda a: torch.as_tensor(a, dtype=x1.dtype, device=x1.device)
    return ShortcutBatch(x0, x1, as_t(t), as_t(d), branch)


def make_cfm_batch(x1, rng: np.random.Generator, grid: TimeGrid = TimeGrid()) -> ShortcutBatch:
    """Plain OT-CFM batch: every item regresses the flow at ``d = 0``."""
    B = x1.shape[0]
    x0 = torch.as_tensor(rng.standard_normal(x1.shape), dtype=x1.dtype, device=x1.device)
    t = torch.as_tensor(sample_fm_times(grid, rng, B), dtype=x1.dtype, device=x1.device)
    return ShortcutBatch(x0, x1, t, torch.zeros_like(t), torch.zeros(B, dtype=torch.long))


def _masked_mean(sq, weight):
    if weight is None:
        return sq.mean()
    w = weight.to(sq.dtype)
    while w.ndim < sq.ndim:
        w = w.unsqueeze(-1)
    w = w.expand_as(sq)
    return (sq * w).sum() / w.sum().clamp_min(1.0)


def cfm_loss(model, batch: ShortcutBatch, cond=None, sigma_min: float = 0.0, loss_mask=None):
    """Vanilla OT-CFM loss (all items at ``d = 0``)."""
    x_t = ot_interpolate(batch.x0, batch.x1, batch.t, sigma_min)
    pred = model(x_t, batch.t, torch.zeros_like(batch.t), cond)
    return _masked_mean((pred - fm_target(batch.x0, batch.x1, sigma_min)) ** 2, loss_mask)


def scfm_loss(model, batch: ShortcutBatch, cond=None, cfg: SCFMConfig = SCFMConfig(), loss_mask=None):
    """Combined shortcut objective.

    Returns ``(total, loss_fm, loss_sc)``. Each branch is averaged over its
    own items (and over ``loss_mask`` elements when given); the two means are
    summed with unit weight.
    """
    fm = batch.branch == Branch.FM
    sc = ~fm
    x_t = ot_interpolate(batch.x0, batch.x1, batch.t, cfg.sigma_min)
    # consistency items are queried at 2d in the same forward pass
    d_query = torch.where(sc, 2 * batch.d, batch.d)
    pred = model(x_t, batch.t, d_query, cond)
    sq = (pred - fm_target(batch.x0, batch.x1, cfg.sigma_min)) ** 2
    zero = pred.sum() * 0.0

    if not torch.any(sc):
        loss_fm = _masked_mean(sq, loss_mask)
    elif torch.any(fm):
        idx = fm.nonzero().squeeze(1)
        loss_fm = _masked_mean(sq[idx], None if loss_mask is None else loss_mask[idx])
    else:
        warnings.warn("flow-matching branch is empty", RuntimeWarning, stacklevel=2)
        loss_fm = zero

    if torch.any(sc):
        idx = sc.nonzero().squeeze(1)
        target = consistency_target(model, x_t[idx], batch.t[idx], batch.d[idx], take(cond, idx))
        sq_sc = (pred[idx] - target) ** 2
        loss_sc = _masked_mean(sq_sc, None if loss_mask is None else loss_mask[idx])
        total = loss_fm + loss_sc
    else:
        if cfg.k < 1.0:
            warnings.warn("consistency branch is empty", RuntimeWarning, stacklevel=2)
        loss_sc = zero
        total = loss_fm
    return total, loss_fm, loss_sc
