"""Content-irrelevant perturbation chain: parametric EQ, then pitch randomisation, then formant shift.

The EQ is ten RBJ-cookbook biquads in series (low shelf, eight peaking,
high shelf). Pitch and formant shifting go through a pluggable backend; the
built-in ``naive`` backend uses resampling plus a phase vocoder for pitch
and cepstral envelope warping for formants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from .errors import ConfigurationError, InvalidArgumentError

FORMANT_MAX = 1.4
PITCH_SHIFT_MAX = 2.0
PITCH_RANGE_MAX = 1.5
PEQ_GAIN_DB = 12.0
PEQ_Q_RANGE = (0.5, 2.0)
PEQ_F_MIN = 60.0
PEQ_F_MAX_FRACTION = 0.45
N_PEAKING = 8


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.samples)):
            raise InvalidArgumentError("audio contains non-finite samples")


@dataclass(frozen=True)
class FilterSpec:
    kind: str  # "low_shelf" | "peaking" | "high_shelf"
    freq: float
    gain_db: float
    q: float


@dataclass
class PerturbParams:
    formant_ratio: float
    pitch_shift_ratio: float
    pitch_range_ratio: float
    peq: list = field(default_factory=list)
    sample_rate: int = 16000


def _reciprocal_maybe(x: float, rng: np.random.Generator) -> float:
    return 1.0 / x if rng.random() < 0.5 else x


def sample_perturb_params(rng: np.random.Generator, sample_rate: int) -> PerturbParams:
    formant = _reciprocal_maybe(rng.uniform(1.0, FORMANT_MAX), rng)
    shift = _reciprocal_maybe(rng.uniform(1.0, PITCH_SHIFT_MAX), rng)
    prange = _reciprocal_maybe(rng.uniform(1.0, PITCH_RANGE_MAX), rng)
    f_lo, f_hi = math.log(PEQ_F_MIN), math.log(PEQ_F_MAX_FRACTION * sample_rate)
    kinds = ["low_shelf"] + ["peaking"] * N_PEAKING + ["high_shelf"]
    peq = [
        FilterSpec(kind, float(math.exp(rng.uniform(f_lo, f_hi))), float(rng.uniform(-PEQ_GAIN_DB, PEQ_GAIN_DB)),
                   float(rng.uniform(*PEQ_Q_RANGE)))
        for kind in kinds
    ]
    return PerturbParams(formant, shift, prange, peq, sample_rate)


def biquad_coefficients(spec: FilterSpec, sample_rate: int) -> np.ndarray:
    """Second-order section ``[b0, b1, b2, 1, a1, a2]`` from the RBJ audio-EQ cookbook."""
    A = 10.0 ** (spec.gain_db / 40.0)
    w0 = 2.0 * math.pi * spec.freq / sample_rate
    cw, alpha = math.cos(w0), math.sin(w0) / (2.0 * spec.q)
    if spec.kind == "peaking":
        b = [1 + alpha * A, -2 * cw, 1 - alpha * A]
        a = [1 + alpha / A, -2 * cw, 1 - alpha / A]
    elif spec.kind in ("low_shelf", "high_shelf"):
        sq = 2.0 * math.sqrt(A) * alpha
        sign = 1.0 if spec.kind == "low_shelf" else -1.0
        b = [A * ((A + 1) - sign * (A - 1) * cw + sq),
             sign * 2 * A * ((A - 1) - sign * (A + 1) * cw),
             A * ((A + 1) - sign * (A - 1) * cw - sq)]
        a = [(A + 1) + sign * (A - 1) * cw + sq,
             -sign * 2 * ((A - 1) + sign * (A + 1) * cw),
             (A + 1) + sign * (A - 1) * cw - sq]
    else:
        raise InvalidArgumentError(f"unknown filter kind {spec.kind!r}")
    return np.array([b[0], b[1], b[2], a[0], a[1], a[2]]) / a[0]


def peq_sos(params: PerturbParams) -> np.ndarray:
    sos = np.stack([biquad_coefficients(f, params.sample_rate) for f in params.peq])
    poles = np.abs(np.concatenate([np.roots(s[3:]) for s in sos]))
    if np.any(poles >= 1.0):
        raise RuntimeError(f"unstable EQ section (max pole radius {poles.max():.6f})")
    return sos


def apply_peq(samples, params: PerturbParams) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise InvalidArgumentError("empty signal")
    return sps.sosfilt(peq_sos(params), x)


# ---------------------------------------------------------------- naive backend

def track_f0(x, sr, frame=1024, hop=256, fmin=60.0, fmax=500.0, threshold=0.5):
    """Autocorrelation pitch track; unvoiced frames are NaN."""
    n_frames = max(1, 1 + (len(x) - frame) // hop) if len(x) >= frame else 1
    lag_lo, lag_hi = int(sr / fmax), min(int(sr / fmin), frame - 1)
    f0 = np.full(n_frames, np.nan)
    win = np.hanning(min(frame, len(x)))
    for i in range(n_frames):
        seg = x[i * hop : i * hop + frame]
        seg = (seg - seg.mean()) * win[: len(seg)]
        if len(seg) <= lag_hi or not np.any(seg):
            continue
        ac = np.correlate(seg, seg, mode="full")[len(seg) - 1 :]
        ac = ac / ac[0]
        lag = lag_lo + int(np.argmax(ac[lag_lo:lag_hi]))
        if ac[lag] > threshold:
            f0[i] = sr / lag
    return f0


def phase_vocoder_stretch(x, target_len, n_fft=1024, hop=256):
    """Stretch ``x`` in time to ``target_len`` samples without changing pitch."""
    if len(x) == target_len:
        return x.copy()
    win = np.hanning(n_fft + 1)[:-1]
    pad = np.pad(x, (n_fft // 2, n_fft // 2 + n_fft))
    n_frames = 1 + (len(pad) - n_fft) // hop
    spec = np.stack([np.fft.rfft(pad[i * hop : i * hop + n_fft] * win) for i in range(n_frames)])
    rate = len(x) / target_len
    steps = np.arange(0, n_frames - 1, rate)
    omega = 2 * np.pi * hop * np.arange(n_fft // 2 + 1) / n_fft
    phase = np.angle(spec[0])
    out_frames = []
    for s in steps:
        i = int(s)
        frac = s - i
        mag = (1 - frac) * np.abs(spec[i]) + frac * np.abs(spec[i + 1])
        out_frames.append(mag * np.exp(1j * phase))
        dphi = np.angle(spec[i + 1]) - np.angle(spec[i]) - omega
        dphi -= 2 * np.pi * np.round(dphi / (2 * np.pi))
        phase = phase + omega + dphi
    y = np.zeros(len(out_frames) * hop + n_fft)
    norm = np.zeros_like(y)
    for k, fr in enumerate(out_frames):
        y[k * hop : k * hop + n_fft] += np.fft.irfft(fr, n_fft) * win
        norm[k * hop : k * hop + n_fft] += win**2
    y = y / np.where(norm > 1e-8, norm, 1.0)
    y = y[n_fft // 2 : n_fft // 2 + target_len]
    return np.pad(y, (0, target_len - len(y)))


class NaiveShifter:
    """Resample-then-stretch pitch shifting and cepstral formant warping."""

    hop = 256

    def pitch(self, x, sr, shift, range_ratio):
        if shift == 1.0 and range_ratio == 1.0:
            return x.copy()
        n = len(x)
        frame_ratio = np.full(max(1, n // self.hop + 1), shift, dtype=np.float64)
        if range_ratio != 1.0:
            f0 = track_f0(x, sr, hop=self.hop)
            voiced = np.isfinite(f0)
            if voiced.any():
                med = np.median(f0[voiced])
                target = med + range_ratio * (f0[voiced] - med)
                rr = np.full(len(f0), 1.0)
                rr[voiced] = np.clip(target, 0.25 * med, None) / f0[voiced]
                centers = np.arange(len(f0)) * self.hop + 512
                frame_ratio = shift * np.interp(np.arange(len(frame_ratio)) * self.hop, centers, rr)
        rate = np.interp(np.arange(n), np.arange(len(frame_ratio)) * self.hop, frame_ratio)
        pos = np.concatenate([[0.0], np.cumsum(rate[:-1])])
        pos = pos[pos <= n - 1]
        y = np.interp(pos, np.arange(n), x)
        return phase_vocoder_stretch(y, n, hop=self.hop)

    def formant(self, x, sr, ratio, n_fft=1024, n_cep=30):
        if ratio == 1.0:
            return x.copy()
        n = len(x)
        _, _, Z = sps.stft(x, fs=sr, nperseg=n_fft, noverlap=n_fft - self.hop, boundary="even")
        mag, ph = np.abs(Z), np.angle(Z)
        logmag = np.log(mag + 1e-9)
        cep = np.fft.irfft(logmag, axis=0)
        cep[n_cep:-n_cep] = 0.0
        env = np.fft.rfft(cep, axis=0).real[: mag.shape[0]]
        bins = np.arange(mag.shape[0], dtype=np.float64)
        warped = np.stack([np.interp(bins / ratio, bins, env[:, j]) for j in range(env.shape[1])], axis=1)
        Z2 = np.exp(logmag - env + warped) * np.exp(1j * ph)
        _, y = sps.istft(Z2, fs=sr, nperseg=n_fft, noverlap=n_fft - self.hop, boundary=True)
        y = y[:n]
        return np.pad(y, (0, n - len(y)))


_BACKENDS: dict = {"naive": NaiveShifter()}


def register_backend(name: str, backend) -> None:
    """Register an object with ``pitch(x, sr, shift, range_ratio)`` and ``formant(x, sr, ratio)``."""
    _BACKENDS[name] = backend


def get_backend(name: str):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ConfigurationError(f"no pitch/formant backend named {name!r}; have {sorted(_BACKENDS)}") from None


def apply_pitch_randomization(samples, params: PerturbParams, backend: str = "naive") -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    return get_backend(backend).pitch(x, params.sample_rate, params.pitch_shift_ratio, params.pitch_range_ratio)


def apply_formant_shift(samples, params: PerturbParams, backend: str = "naive") -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    return get_backend(backend).formant(x, params.sample_rate, params.formant_ratio)


def apply_pitch_formant(samples, params: PerturbParams, backend: str = "naive") -> np.ndarray:
    """Pitch randomisation followed by formant shifting."""
    return apply_formant_shift(apply_pitch_randomization(samples, params, backend), params, backend)


def perturb(sig: AudioSignal, rng: np.random.Generator, backend: str = "naive", stage_log: list | None = None,
            params: PerturbParams | None = None) -> AudioSignal:
    """``fs(pr(peq(x)))`` with freshly sampled parameters (unless ``params`` is given)."""
    get_backend(backend)
    if params is None:
        params = sample_perturb_params(rng, sig.sample_rate)
    x = sig.samples
    for name, stage in (("peq", lambda y: apply_peq(y, params)),
                        ("pr", lambda y: apply_pitch_randomization(y, params, backend)),
                        ("fs", lambda y: apply_formant_shift(y, params, backend))):
        x = stage(x)
        if stage_log is not None:
            stage_log.append(name)
    return AudioSignal(x, sig.sample_rate)


def read_wav(path) -> AudioSignal:
    sr, data = wavfile.read(path)
    if data.ndim != 1:
        raise InvalidArgumentError(f"{path}: only mono audio is supported")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    else:
        x = data.astype(np.float64)
    return AudioSignal(x, int(sr))


def write_wav(path, sig: AudioSignal, float32: bool = False) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if float32:
        wavfile.write(path, sig.sample_rate, sig.samples.astype(np.float32))
    else:
        pcm = np.clip(np.round(sig.samples * 32767.0), -32768, 32767).astype(np.int16)
        wavfile.write(path, sig.sample_rate, pcm)
