import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shortcutvc.errors import InvalidArgumentError
from shortcutvc.masking import (
    count_runs,
    decode_decay,
    mask_ratio_from_uniform,
    sample_duration_mask,
    sample_mask_ratio,
    sample_span_mask,
    span_mask_from_ratio,
)


def test_ratio_endpoints():
    assert mask_ratio_from_uniform(0.0) == 0.0
    assert mask_ratio_from_uniform(math.pi / 2) == 1.0


def test_ratio_range():
    r = sample_mask_ratio(np.random.default_rng(0), size=1000)
    assert r.min() >= 0.0 and r.max() <= 1.0


def test_duration_mask_degenerate_probs():
    rng = np.random.default_rng(0)
    assert sample_duration_mask(5, 1.0, rng).all()
    for _ in range(20):
        assert sample_duration_mask(5, 0.0, rng).sum() == 1


def test_duration_mask_mean():
    bits = sample_duration_mask(100_000, 0.5, np.random.default_rng(1))
    assert abs(bits.mean() - 0.5) < 0.01


@pytest.mark.parametrize("n,p", [(0, 0.5), (-1, 0.5), (4, 1.5), (4, -0.1)])
def test_duration_mask_bad_args(n, p):
    with pytest.raises(InvalidArgumentError):
        sample_duration_mask(n, p, np.random.default_rng(0))


@pytest.mark.parametrize("n,T,t,expected", [(10, 5, 1, 8), (10, 5, 5, 0), (7, 3, 1, 5), (10, 5, 0, 10)])
def test_decode_decay_examples(n, T, t, expected):
    assert decode_decay(n, T, t) == expected


def test_decode_decay_matches_ceiling():
    for n, T, t in [(7, 3, 2), (13, 10, 3), (1, 10, 9), (512, 32, 31)]:
        assert decode_decay(n, T, t) == math.ceil(n * (T - t) / T)


@pytest.mark.parametrize("t", [-1, 6])
def test_decode_decay_out_of_range(t):
    with pytest.raises(InvalidArgumentError):
        decode_decay(10, 5, t)


def test_span_mask_examples():
    assert span_mask_from_ratio(100, 1.0, 0.3).all()
    bits = span_mask_from_ratio(100, 0.7, 0.5)
    assert bits.sum() == 70 and count_runs(bits) == 1


def test_span_mask_fraction_range():
    rng = np.random.default_rng(2)
    fr = np.array([sample_span_mask(200, 0.7, 1.0, rng).mean() for _ in range(10_000)])
    assert fr.min() >= 0.70 and fr.max() <= 1.0


def test_span_mask_bad_args():
    with pytest.raises(InvalidArgumentError):
        sample_span_mask(0, 0.7, 1.0, np.random.default_rng(0))
    with pytest.raises(InvalidArgumentError):
        sample_span_mask(10, 0.8, 0.7, np.random.default_rng(0))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 300), st.floats(0.01, 1.0), st.floats(0.0, 0.999))
def test_span_mask_contiguous(n, ratio, start):
    bits = span_mask_from_ratio(n, ratio, start)
    assert count_runs(bits) == 1
    assert bits.sum() == min(max(int(math.floor(ratio * n + 0.5)), 1), n)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 512), st.integers(1, 32))
def test_decode_decay_monotone(n, T):
    vals = [decode_decay(n, T, t) for t in range(T + 1)]
    assert vals[0] == n and vals[-1] == 0
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_mask_functions_leave_global_state_alone():
    np.random.seed(123)
    before = np.random.random()
    np.random.seed(123)
    sample_span_mask(50, 0.7, 1.0, np.random.default_rng(0))
    sample_duration_mask(50, 0.3, np.random.default_rng(0))
    assert np.random.random() == before
