import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from shortcutvc.codec import ReducedContent, length_regulate, rle_decode, rle_encode, split_long_runs, validate_reduced
from shortcutvc.errors import InvalidArgumentError


def _runs_by_loop(tokens):
    # straightforward reference run-length coder
    units, durs = [], []
    for tok in tokens:
        if units and units[-1] == tok:
            durs[-1] += 1
        else:
            units.append(tok)
            durs.append(1)
    return units, durs


def test_encode_worked_example():
    rc = rle_encode([1, 1, 1, 2, 3, 3])
    assert rc.units.tolist() == [1, 2, 3]
    assert rc.durations.tolist() == [3, 1, 2]


def test_encode_singleton():
    rc = rle_encode([7])
    assert rc.units.tolist() == [7] and rc.durations.tolist() == [1]


def test_decode_examples():
    assert rle_decode(ReducedContent([1, 2, 3], [3, 1, 2])).tolist() == [1, 1, 1, 2, 3, 3]
    assert rle_decode(ReducedContent([5], [4])).tolist() == [5, 5, 5, 5]


def test_encode_empty_rejected():
    with pytest.raises(InvalidArgumentError):
        rle_encode([])


@pytest.mark.parametrize("durs", [[3, 0, 2], [1, -1]])
def test_decode_rejects_non_positive(durs):
    with pytest.raises(InvalidArgumentError):
        rle_decode(ReducedContent(list(range(len(durs))), durs))


def test_random_1000_roundtrip_matches_loop_reference():
    rng = np.random.default_rng(3)
    x = rng.integers(0, 32, size=1000)
    rc = rle_encode(x)
    units, durs = _runs_by_loop(x.tolist())
    assert rc.units.tolist() == units and rc.durations.tolist() == durs
    np.testing.assert_array_equal(rle_decode(rc), x)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=200))
def test_roundtrip_property(tokens):
    rc = rle_encode(tokens)
    validate_reduced(rc)
    assert rle_decode(rc).tolist() == tokens
    assert rc.n_frames == len(tokens)
    assert rle_encode(rle_decode(rc)) == rc


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(1, 20)), min_size=1, max_size=50))
def test_reduced_roundtrip_property(pairs):
    units, durs = [], []
    for u, d in pairs:  # drop adjacent repeats so the input is canonical
        if units and units[-1] == u:
            continue
        units.append(u)
        durs.append(d)
    rc = ReducedContent(units, durs)
    assert rle_encode(rle_decode(rc)) == rc


def test_validate_rejects_adjacent_repeats():
    with pytest.raises(InvalidArgumentError):
        validate_reduced(ReducedContent([1, 1], [1, 2]))


def test_split_long_runs():
    rc = split_long_runs(ReducedContent([4, 9], [150, 3]), d_max=64)
    assert rc.units.tolist() == [4, 4, 4, 9]
    assert rc.durations.tolist() == [64, 64, 22, 3]
    assert rc.n_frames == 153


def test_length_regulate_examples():
    e = np.arange(8.0).reshape(2, 4)
    np.testing.assert_array_equal(length_regulate(e, [1, 1]), e)
    one = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(length_regulate(one, [3]), np.repeat(one, 3, axis=0))
    emb = np.arange(12.0).reshape(4, 3)
    out = length_regulate(emb, [2, 1, 3, 1])
    assert out.shape == (7, 3)
    for row in (3, 4, 5):
        np.testing.assert_array_equal(out[row], emb[2])


def test_length_regulate_torch_gradient_flows():
    emb = torch.randn(3, 2, requires_grad=True)
    out = length_regulate(emb, [1, 2, 3])
    out.sum().backward()
    np.testing.assert_array_equal(emb.grad[:, 0].numpy(), [1.0, 2.0, 3.0])


def test_length_regulate_mismatch():
    with pytest.raises(InvalidArgumentError):
        length_regulate(np.zeros((3, 2)), [1, 2])
    with pytest.raises(InvalidArgumentError):
        length_regulate(torch.zeros(2, 2), [1, 0])
