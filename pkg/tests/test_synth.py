import dataclasses
import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shortcutvc.codec import rle_encode
from shortcutvc.errors import FormatError, InvalidArgumentError
from shortcutvc.synth import (
    RateClass,
    World,
    WorldConfig,
    classify_rate,
    gen_speaker,
    generate_corpus,
    load_corpus,
    nearest_speaker,
    pps,
    read_token_corpus,
    save_corpus,
)

SMALL = WorldConfig(n_speakers=6, n_train=30, n_test=24)


@pytest.fixture(scope="module")
def small_corpus():
    return generate_corpus(SMALL)


def test_speaker_deterministic_and_normalised():
    a, b = gen_speaker(5), gen_speaker(5)
    assert a == b
    assert abs(np.linalg.norm(a.spk_vector) - 1) < 1e-6
    assert np.all(np.abs(a.timbre_matrix) <= 1)


def test_distinct_speakers_have_dissimilar_vectors():
    vecs = np.stack([gen_speaker(s).spk_vector for s in range(60)])
    cos = vecs @ vecs.T
    iu = np.triu_indices(60, 1)
    assert np.mean(cos[iu] < 0.9) >= 0.99


def test_unit_rate_without_noise_gives_base_table():
    w = World()
    spk = dataclasses.replace(w.gen_speaker(3), rate_multiplier=1.0)
    u = w.gen_utterance(11, spk, noise=False)
    np.testing.assert_array_equal(u.content.durations, w.base[u.content.units])


def test_rate_scaling():
    w = World()
    fast = dataclasses.replace(w.gen_speaker(1), rate_multiplier=0.7)
    slow = dataclasses.replace(w.gen_speaker(2), rate_multiplier=1.4)
    units = w.sample_units(4)
    a, b = w.law_durations(units, fast), w.law_durations(units, slow)
    # each side is within half a frame of base * rate
    assert np.all(np.abs(b - 2 * a) <= 1.5)
    np.testing.assert_array_equal(a, np.floor(w.base[units] * 0.7 + 0.5).astype(int))


def test_noise_is_bounded():
    w = World()
    spk = w.gen_speaker(7)
    for seed in range(20):
        u = w.gen_utterance(seed, spk)
        assert np.all(np.abs(u.content.durations - u.law_durations) <= 1)
        assert u.features.shape == (u.content.n_frames, w.cfg.channels)


def test_oracle_render_deterministic_and_structured():
    w = World()
    spk = w.gen_speaker(9)
    units, durs = np.array([0, 5, 5 + 1]), np.array([2, 3, 1])
    a = w.oracle_render(units, durs, spk)
    assert np.array_equal(a, w.oracle_render(units, durs, spk))
    # run means are timbre column + bias; the ramp is zero-mean within a run
    np.testing.assert_allclose(a[2:5].mean(0), spk.timbre_matrix[:, 5] + spk.bias, atol=1e-6)
    with pytest.raises(InvalidArgumentError):
        w.oracle_render(units, np.array([1, 0, 1]), spk)


def test_unit_speaker_columns_are_distinct():
    w = World()
    cols = np.concatenate([w.gen_speaker(s).timbre_matrix.T + w.gen_speaker(s).bias for s in range(20)])
    assert len(np.unique(np.round(cols, 6), axis=0)) == cols.shape[0]


def test_renderer_injective_over_test_split(small_corpus):
    w = small_corpus.world
    seen = {}
    for u in small_corpus.test:
        for s in small_corpus.speakers.values():
            key = (tuple(u.content.units), tuple(u.content.durations), s.id)
            h = hashlib.sha256(w.oracle_render(u.content.units, u.content.durations, s).tobytes()).hexdigest()
            assert seen.setdefault(h, key) == key


def test_nearest_speaker_recovers_speaker(small_corpus):
    spks = list(small_corpus.speakers.values())
    for u in small_corpus.test:
        got = nearest_speaker(u.features, u.content.units, u.content.durations, spks, small_corpus.world)
        assert got == u.speaker_id


def test_pps_examples():
    assert pps([10] * 10) == pytest.approx(5.0)
    assert pps([5, 100, 5], units=[1, 32, 2], silence_id=32) == pytest.approx(2 / 0.2)
    with pytest.raises(InvalidArgumentError):
        pps([4, 4], units=[32, 32], silence_id=32)
    with pytest.raises(InvalidArgumentError):
        pps([])


@pytest.mark.parametrize("value,label", [(7.5, RateClass.SLOW), (12, RateClass.NORMAL), (15, RateClass.FAST),
                                         (7.98, RateClass.NORMAL), (14.47, RateClass.NORMAL), (20.0, RateClass.FAST)])
def test_classify_rate(value, label):
    assert classify_rate(value) is label


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=100))
def test_pps_computed_on_deduplicated_tokens(tokens):
    rc = rle_encode(tokens)
    assert pps(rc.durations) == pytest.approx(len(rc) / (len(tokens) * 0.02))


def test_rate_bands_map_to_classes(small_corpus):
    for spk in small_corpus.speakers.values():
        assert small_corpus.speaker_class(spk.id).value == spk.band


def test_corpus_roundtrip(tmp_path, small_corpus):
    save_corpus(small_corpus, tmp_path)
    back = load_corpus(tmp_path)
    assert [u.id for u in back.test] == [u.id for u in small_corpus.test]
    for a, b in zip(back.train + back.test, small_corpus.train + small_corpus.test):
        assert a.content == b.content and a.speaker_id == b.speaker_id
        np.testing.assert_array_equal(a.features, b.features)
    assert back.speakers == small_corpus.speakers
    first = json.loads((tmp_path / "tokens.jsonl").read_text().splitlines()[0])
    assert set(first) >= {"tokens", "speaker"}
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["world"]["seed"] == 0 and len(manifest["splits"]["test"]) == 24


def test_token_reader_rejects_bad_records(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text('{"tokens": [1, 1, 2], "speaker": "a"}\n{"tokens": [3]}\n')
    with pytest.raises(FormatError):
        read_token_corpus(p)
    with pytest.raises(FormatError):
        load_corpus(tmp_path / "missing")


def test_corpus_generation_deterministic():
    a, b = generate_corpus(SMALL), generate_corpus(SMALL)
    for x, y in zip(a.train, b.train):
        assert x.content == y.content and np.array_equal(x.features, y.features)
