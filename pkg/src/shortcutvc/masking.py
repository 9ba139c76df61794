"""Masking schedules for duration training, iterative decoding and acoustic infilling.

All samplers take an explicit ``numpy.random.Generator``; nothing here touches
global random state.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidArgumentError


def mask_ratio_from_uniform(u):
    """Sine schedule: map ``u`` in [0, pi/2] to a masking ratio ``sin(u)``."""
    return np.sin(u)


def sample_mask_ratio(rng: np.random.Generator, size=None):
    """Draw masking ratio(s) ``sin(u)`` with ``u ~ U[0, pi/2]``."""
    u = rng.uniform(0.0, math.pi / 2, size=size)
    r = mask_ratio_from_uniform(u)
    return float(r) if size is None else r


def sample_duration_mask(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. Bernoulli(p) mask of length ``n``; at least one bit is always set."""
    if n <= 0:
        raise InvalidArgumentError(f"mask length must be positive, got {n}")
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"masking probability must lie in [0, 1], got {p}")
    bits = rng.random(n) < p
    if not bits.any():
        bits[rng.integers(n)] = True
    return bits


def decode_decay(n: int, T: int, t: int) -> int:
    """Number of positions left masked after iteration ``t`` of ``T``.

    Linear decay ``n * (T - t) / T`` rounded up, so every iteration makes
    progress and the final iteration leaves nothing masked.
    """
    if T < 1:
        raise InvalidArgumentError(f"T must be >= 1, got {T}")
    if not 0 <= t <= T:
        raise InvalidArgumentError(f"iteration {t} outside [0, {T}]")
    if n < 0:
        raise InvalidArgumentError(f"n must be non-negative, got {n}")
    return -(-n * (T - t) // T)


def span_mask_from_ratio(n_frames: int, ratio: float, start_fraction: float) -> np.ndarray:
    """Contiguous span of ``round(ratio * n_frames)`` frames.

    ``start_fraction`` in [0, 1) picks the start uniformly among the valid
    offsets.
    """
    length = int(math.floor(ratio * n_frames + 0.5))
    length = min(max(length, 1), n_frames)
    n_starts = n_frames - length + 1
    start = min(int(start_fraction * n_starts), n_starts - 1)
    bits = np.zeros(n_frames, dtype=bool)
    bits[start : start + length] = True
    return bits


def sample_span_mask(n_frames: int, lo: float, hi: float, rng: np.random.Generator) -> np.ndarray:
    """Mask one contiguous span covering a ``U[lo, hi]`` fraction of the frames.

    The unmasked remainder (prefix and/or suffix) serves as the speaker prompt.
    """
    if n_frames <= 0:
        raise InvalidArgumentError(f"frame count must be positive, got {n_frames}")
    if not 0.0 < lo <= hi <= 1.0:
        raise InvalidArgumentError(f"need 0 < lo <= hi <= 1, got lo={lo}, hi={hi}")
    ratio = rng.uniform(lo, hi)
    return span_mask_from_ratio(n_frames, ratio, rng.random())


def count_runs(bits: np.ndarray) -> int:
    """Number of maximal runs of True in a boolean vector."""
    b = np.asarray(bits, dtype=np.int8)
    return int(np.sum(np.diff(np.r_[0, b]) == 1))
