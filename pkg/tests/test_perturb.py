import numpy as np
import pytest

from shortcutvc.errors import ConfigurationError
from shortcutvc.perturb import (
    AudioSignal,
    FilterSpec,
    PerturbParams,
    apply_peq,
    apply_pitch_formant,
    biquad_coefficients,
    perturb,
    peq_sos,
    read_wav,
    register_backend,
    sample_perturb_params,
    track_f0,
    write_wav,
)
from scipy import signal as sps

SR = 16000


def probe_gain_db(sos, freq, sr=SR, seconds=1.0):
    """Steady-state gain of ``sos`` at ``freq`` by least-squares fit of a sinusoid to the output."""
    t = np.arange(int(sr * seconds)) / sr
    y = sps.sosfilt(sos, np.sin(2 * np.pi * freq * t))
    keep = slice(len(t) // 2, None)
    basis = np.stack([np.sin(2 * np.pi * freq * t[keep]), np.cos(2 * np.pi * freq * t[keep])], axis=1)
    coef, *_ = np.linalg.lstsq(basis, y[keep], rcond=None)
    return 20 * np.log10(np.hypot(*coef))


def params_with(filters):
    return PerturbParams(1.0, 1.0, 1.0, filters, SR)


def harmonic(f0, seconds=0.5, sr=SR, vibrato=0.0):
    t = np.arange(int(sr * seconds)) / sr
    inst = f0 * (1 + vibrato * np.sin(2 * np.pi * 4 * t))
    phase = 2 * np.pi * np.cumsum(inst) / sr
    return sum(0.3 / k * np.sin(k * phase) for k in range(1, 6))


def test_param_ranges_and_layout():
    rng = np.random.default_rng(0)
    for _ in range(500):
        p = sample_perturb_params(rng, SR)
        assert 1 / 1.4 <= p.formant_ratio <= 1.4
        assert 0.5 <= p.pitch_shift_ratio <= 2.0
        assert 1 / 1.5 <= p.pitch_range_ratio <= 1.5
        assert [f.kind for f in p.peq] == ["low_shelf"] + ["peaking"] * 8 + ["high_shelf"]
        assert all(-12 <= f.gain_db <= 12 and 0.5 <= f.q <= 2 and 60 <= f.freq <= 0.45 * SR for f in p.peq)


def test_reciprocal_symmetry():
    rng = np.random.default_rng(1)
    logs = np.array([[np.log(p.formant_ratio), np.log(p.pitch_shift_ratio)]
                     for p in (sample_perturb_params(rng, SR) for _ in range(100_000))])
    assert np.all(np.abs(logs.mean(0)) < 0.01)


def test_peaking_plus_six_db():
    sos = biquad_coefficients(FilterSpec("peaking", 1000.0, 6.0, 1.0), SR)[None]
    assert abs(probe_gain_db(sos, 1000.0) - 6.0) < 0.5


def test_sampled_filters_hit_their_gain_at_center():
    # peaking: full gain at f0; shelves: half the plateau gain at the corner frequency
    rng = np.random.default_rng(2)
    for _ in range(10):
        p = sample_perturb_params(rng, SR)
        for f in p.peq:
            sos = biquad_coefficients(f, SR)[None]
            expected = f.gain_db if f.kind == "peaking" else f.gain_db / 2
            assert abs(probe_gain_db(sos, f.freq) - expected) < 0.5, f


def test_shelf_plateaus():
    low = biquad_coefficients(FilterSpec("low_shelf", 300.0, 9.0, 0.707), SR)
    high = biquad_coefficients(FilterSpec("high_shelf", 3000.0, -7.0, 0.707), SR)
    _, h_low = sps.sosfreqz(low[None], worN=[0.0], fs=SR)
    _, h_high = sps.sosfreqz(high[None], worN=[SR / 2], fs=SR)
    assert 20 * np.log10(abs(h_low[0])) == pytest.approx(9.0, abs=1e-9)
    assert 20 * np.log10(abs(h_high[0])) == pytest.approx(-7.0, abs=1e-9)


def test_zero_gain_chain_is_identity():
    rng = np.random.default_rng(3)
    p = sample_perturb_params(rng, SR)
    flat = params_with([FilterSpec(f.kind, f.freq, 0.0, f.q) for f in p.peq])
    x = rng.standard_normal(4000)
    assert np.max(np.abs(apply_peq(x, flat) - x)) < 1e-10


def test_cascade_equals_convolution_of_sections():
    p = sample_perturb_params(np.random.default_rng(4), SR)
    imp = np.zeros(2048)
    imp[0] = 1.0
    chain = apply_peq(imp, p)
    ref = imp
    for s in peq_sos(p):
        ref = np.convolve(ref, sps.sosfilt(s[None], imp))[: len(imp)]
    assert np.max(np.abs(chain - ref)) < 1e-10


def test_peq_linear():
    rng = np.random.default_rng(5)
    p = sample_perturb_params(rng, SR)
    x, y = rng.standard_normal(3000), rng.standard_normal(3000)
    lhs = apply_peq(2.5 * x - 0.7 * y, p)
    rhs = 2.5 * apply_peq(x, p) - 0.7 * apply_peq(y, p)
    assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_sampled_biquads_stable():
    rng = np.random.default_rng(6)
    for _ in range(300):
        sos = peq_sos(sample_perturb_params(rng, SR))
        for s in sos:
            assert np.all(np.abs(np.roots(s[3:])) < 1)


def test_identity_pitch_formant():
    x = harmonic(150.0)
    y = apply_pitch_formant(x, PerturbParams(1.0, 1.0, 1.0, [], SR))
    assert np.sqrt(np.mean((x - y) ** 2)) < 1e-6


def test_octave_shift_of_pure_tone():
    t = np.arange(SR) / SR
    x = 0.5 * np.sin(2 * np.pi * 220 * t)
    y = apply_pitch_formant(x, PerturbParams(1.0, 2.0, 1.0, [], SR))
    assert abs(len(y) - len(x)) <= 256
    seg = y[2000:-2000] * np.hanning(len(y) - 4000)
    spec = np.abs(np.fft.rfft(seg, 1 << 17))
    peak = np.argmax(spec) * SR / (1 << 17)
    assert abs(peak - 440.0) < 5.0


def test_pitch_range_widens_contour():
    x = harmonic(160.0, seconds=1.0, vibrato=0.06)
    wide = apply_pitch_formant(x, PerturbParams(1.0, 1.0, 1.5, [], SR))
    narrow = apply_pitch_formant(x, PerturbParams(1.0, 1.0, 1 / 1.5, [], SR))
    spread = lambda s: np.nanstd(track_f0(s, SR)[2:-2])
    assert spread(wide) > spread(x) > spread(narrow)


def test_formant_shift_moves_envelope_up():
    x = harmonic(120.0)
    up = apply_pitch_formant(x, PerturbParams(1.3, 1.0, 1.0, [], SR))
    centroid = lambda s: (np.abs(np.fft.rfft(s)) * np.arange(len(s) // 2 + 1)).sum() / np.abs(np.fft.rfft(s)).sum()
    assert centroid(up) > centroid(x)
    assert len(up) == len(x)


def test_missing_backend():
    with pytest.raises(ConfigurationError):
        apply_pitch_formant(np.zeros(100), PerturbParams(1.0, 1.0, 1.0, [], SR), backend="praat")


def test_custom_backend_and_stage_order():
    calls = []

    class Spy:
        def pitch(self, x, sr, shift, rr):
            calls.append("pitch")
            return x

        def formant(self, x, sr, ratio):
            calls.append("formant")
            return x

    register_backend("spy", Spy())
    log = []
    out = perturb(AudioSignal(harmonic(150.0), SR), np.random.default_rng(0), backend="spy", stage_log=log)
    assert log == ["peq", "pr", "fs"]
    assert calls == ["pitch", "formant"]
    assert out.sample_rate == SR


def test_perturb_deterministic_and_length_preserving():
    sig = AudioSignal(harmonic(140.0), SR)
    a = perturb(sig, np.random.default_rng(9))
    b = perturb(sig, np.random.default_rng(9))
    assert np.array_equal(a.samples, b.samples)
    assert abs(len(a.samples) - len(sig.samples)) <= 256


@pytest.mark.parametrize("float32", [False, True])
def test_wav_roundtrip(tmp_path, float32):
    x = 0.4 * np.sin(np.linspace(0, 40, 800))
    write_wav(tmp_path / "a.wav", AudioSignal(x, SR), float32=float32)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == SR
    assert np.max(np.abs(back.samples - x)) < (1e-6 if float32 else 1 / 32767)
