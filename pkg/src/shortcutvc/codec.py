"""Run-length coding of discrete content tokens and frame-level length regulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidArgumentError

FRAME_RATE_HZ = 50
FRAME_SECONDS = 1.0 / FRAME_RATE_HZ
DEFAULT_D_MAX = 64


@dataclass(frozen=True, eq=False)
class ReducedContent:
    """Deduplicated units and the run length of each one (in token frames)."""

    units: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        units = np.asarray(self.units, dtype=np.int64).reshape(-1)
        durations = np.asarray(self.durations, dtype=np.int64).reshape(-1)
        if len(units) != len(durations):
            raise InvalidArgumentError(
                f"units and durations differ in length: {len(units)} vs {len(durations)}"
            )
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "durations", durations)

    def __len__(self) -> int:
        return len(self.units)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReducedContent):
            return NotImplemented
        return np.array_equal(self.units, other.units) and np.array_equal(
            self.durations, other.durations
        )

    @property
    def n_frames(self) -> int:
        return int(self.durations.sum())

    def to_dict(self) -> dict:
        return {"units": self.units.tolist(), "durations": self.durations.tolist()}


def rle_encode(tokens) -> ReducedContent:
    """Collapse runs of repeated tokens, e.g. ``[1, 1, 1, 2, 3, 3]`` to units
    ``[1, 2, 3]`` with durations ``[3, 1, 2]``."""
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if tokens.size == 0:
        raise InvalidArgumentError("cannot encode an empty token sequence")
    starts = np.flatnonzero(np.r_[True, tokens[1:] != tokens[:-1]])
    durations = np.diff(np.r_[starts, tokens.size])
    return ReducedContent(tokens[starts], durations)


def rle_decode(rc: ReducedContent) -> np.ndarray:
    if len(rc) == 0:
        raise InvalidArgumentError("cannot decode an empty unit sequence")
    if np.any(rc.durations <= 0):
        raise InvalidArgumentError("durations must be positive")
    return np.repeat(rc.units, rc.durations)


def validate_reduced(rc: ReducedContent) -> None:
    """Raise unless ``rc`` is a canonical run-length encoding."""
    if len(rc) == 0:
        raise InvalidArgumentError("empty reduced content")
    if np.any(rc.durations < 1):
        raise InvalidArgumentError("durations must be >= 1")
    if np.any(rc.units[1:] == rc.units[:-1]):
        raise InvalidArgumentError("adjacent units must differ")


def split_long_runs(rc: ReducedContent, d_max: int = DEFAULT_D_MAX) -> ReducedContent:
    """Split runs longer than ``d_max`` into consecutive runs of at most ``d_max``.

    The result may repeat a unit in adjacent positions; it is meant for the
    duration model's bounded vocabulary, not for the lossless codec.
    """
    if d_max < 1:
        raise InvalidArgumentError("d_max must be positive")
    units, durations = [], []
    for u, d in zip(rc.units.tolist(), rc.durations.tolist()):
        while d > d_max:
            units.append(u)
            durations.append(d_max)
            d -= d_max
        units.append(u)
        durations.append(d)
    return ReducedContent(units, durations)


def length_regulate(unit_embeddings, durations):
    """Repeat row ``i`` of ``unit_embeddings`` ``durations[i]`` times.

    Works on numpy arrays and torch tensors (gradients flow through the
    tensor path).
    """
    if isinstance(unit_embeddings, torch.Tensor):
        reps = torch.as_tensor(durations, dtype=torch.long, device=unit_embeddings.device)
        if reps.ndim != 1 or reps.numel() != unit_embeddings.shape[0]:
            raise InvalidArgumentError(
                f"expected {unit_embeddings.shape[0]} durations, got {tuple(reps.shape)}"
            )
        if torch.any(reps < 1):
            raise InvalidArgumentError("durations must be positive")
        return torch.repeat_interleave(unit_embeddings, reps, dim=0)
    emb = np.asarray(unit_embeddings)
    reps = np.asarray(durations, dtype=np.int64)
    if reps.ndim != 1 or len(reps) != emb.shape[0]:
        raise InvalidArgumentError(f"expected {emb.shape[0]} durations, got {reps.shape}")
    if np.any(reps < 1):
        raise InvalidArgumentError("durations must be positive")
    return np.repeat(emb, reps, axis=0)
