"""Deterministic synthetic voice-conversion world.

Stands in for real speech: speakers carry a unit-norm embedding, a timbre
matrix and a speaking-rate multiplier; utterances are Markov unit sequences
whose durations follow ``round(base[u] * rate + noise)``; features come from
an exactly computable renderer. Every draw is derived from explicit seeds.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np

from . import arrays
from .codec import DEFAULT_D_MAX, FRAME_SECONDS, ReducedContent, rle_decode, rle_encode, validate_reduced
from .errors import FormatError, InvalidArgumentError

SLOW_BELOW = 7.98
FAST_ABOVE = 14.47

# rate multiplier bands; a multiplier scales durations, so larger is slower
RATE_BANDS = {
    "fast": (0.60, 0.63),
    "normal": (0.90, 1.05),
    "slow": (1.52, 1.60),
}
BAND_ORDER = ("fast", "normal", "slow")


class RateClass(str, Enum):
    SLOW = "slow"
    NORMAL = "normal"
    FAST = "fast"


@dataclass
class WorldConfig:
    seed: int = 0
    n_units: int = 32
    channels: int = 16
    spk_dim: int = 192
    n_speakers: int = 20
    n_train: int = 2000
    n_test: int = 200
    d_max: int = DEFAULT_D_MAX
    min_units: int = 30
    max_units: int = 60
    base_min: int = 3
    base_max: int = 6
    silence_base: int = 8
    silence_prob: float = 0.08
    noise_probs: tuple = (0.2, 0.6, 0.2)
    ramp_scale: float = 0.3
    transition_concentration: float = 5.0

    def __post_init__(self):
        self.noise_probs = tuple(self.noise_probs)

    @property
    def silence_id(self) -> int:
        return self.n_units

    @property
    def vocab(self) -> int:
        return self.n_units + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise_probs"] = list(self.noise_probs)
        return d


@dataclass(eq=False)
class SyntheticSpeaker:
    id: str
    seed: int
    spk_vector: np.ndarray
    timbre_matrix: np.ndarray
    bias: np.ndarray
    rate_multiplier: float
    band: str | None = None

    def __eq__(self, other):
        if not isinstance(other, SyntheticSpeaker):
            return NotImplemented
        return (self.id == other.id and self.seed == other.seed
                and np.array_equal(self.spk_vector, other.spk_vector)
                and np.array_equal(self.timbre_matrix, other.timbre_matrix)
                and np.array_equal(self.bias, other.bias)
                and self.rate_multiplier == other.rate_multiplier)


@dataclass(eq=False)
class SyntheticUtterance:
    id: str
    content_seed: int
    speaker_id: str
    content: ReducedContent
    law_durations: np.ndarray
    features: np.ndarray

    @property
    def tokens(self) -> np.ndarray:
        return rle_decode(self.content)

    @property
    def n_frames(self) -> int:
        return self.content.n_frames


class World:
    """Fixed world tables (duration base, unit transitions, shared timbre basis)."""

    def __init__(self, cfg: WorldConfig | None = None):
        self.cfg = cfg or WorldConfig()
        c = self.cfg
        rng = np.random.default_rng([c.seed, 0])
        self.base = np.r_[rng.integers(c.base_min, c.base_max + 1, size=c.n_units), c.silence_base].astype(np.int64)
        trans = rng.dirichlet(np.full(c.n_units, c.transition_concentration), size=c.n_units)
        np.fill_diagonal(trans, 0.0)
        self.transitions = trans / trans.sum(1, keepdims=True)
        self.timbre_basis = rng.standard_normal((c.channels, c.vocab))
        ramp = rng.standard_normal(c.channels)
        self.ramp_dir = ramp / np.linalg.norm(ramp)

    def gen_speaker(self, seed: int, band: str | None = None, speaker_id: str | None = None) -> SyntheticSpeaker:
        c = self.cfg
        rng = np.random.default_rng([c.seed, 1, seed])
        vec = rng.standard_normal(c.spk_dim)
        vec /= np.linalg.norm(vec)
        offset = 0.6 * rng.standard_normal(c.channels)
        timbre = np.tanh(1.5 * self.timbre_basis + offset[:, None])
        bias = 0.3 * rng.standard_normal(c.channels)
        lo, hi = RATE_BANDS[band] if band is not None else (0.6, 1.6)
        rate = float(rng.uniform(lo, hi))
        return SyntheticSpeaker(speaker_id or f"spk{seed:04d}", seed, vec, timbre, bias, rate, band)

    def sample_units(self, content_seed: int) -> np.ndarray:
        c = self.cfg
        rng = np.random.default_rng([c.seed, 2, content_seed])
        n = int(rng.integers(c.min_units, c.max_units + 1))
        units = [c.silence_id]
        u = int(rng.integers(c.n_units))
        for i in range(n):
            units.append(u)
            if i < n - 1 and rng.random() < c.silence_prob:
                units.append(c.silence_id)
            u = int(rng.choice(c.n_units, p=self.transitions[u]))
        units.append(c.silence_id)
        return np.asarray(units, dtype=np.int64)

    def law_durations(self, units, speaker: SyntheticSpeaker) -> np.ndarray:
        """Noise-free durations ``clamp(round(base[u] * rate), 1, d_max)``."""
        x = self.base[np.asarray(units)] * speaker.rate_multiplier
        return np.clip(np.floor(x + 0.5).astype(np.int64), 1, self.cfg.d_max)

    def gen_utterance(self, content_seed: int, speaker: SyntheticSpeaker, noise: bool = True,
                      utt_id: str | None = None) -> SyntheticUtterance:
        c = self.cfg
        units = self.sample_units(content_seed)
        law = self.law_durations(units, speaker)
        durs = law
        if noise:
            rng = np.random.default_rng([c.seed, 3, content_seed, speaker.seed])
            jitter = rng.choice([-1, 0, 1], size=len(units), p=list(c.noise_probs))
            durs = np.clip(law + jitter, 1, c.d_max)
        content = ReducedContent(units, durs)
        validate_reduced(content)
        feats = self.oracle_render(units, durs, speaker)
        return SyntheticUtterance(utt_id or f"utt{content_seed:05d}", content_seed, speaker.id, content, law, feats)

    def oracle_render(self, units, durations, speaker: SyntheticSpeaker) -> np.ndarray:
        """Frames x channels features: timbre column + within-run ramp + speaker bias."""
        units = np.asarray(units, dtype=np.int64)
        durations = np.asarray(durations, dtype=np.int64)
        if len(units) != len(durations) or np.any(durations < 1):
            raise InvalidArgumentError("units and positive durations must align")
        cols = np.repeat(speaker.timbre_matrix[:, units].T, durations, axis=0)
        starts = np.repeat(np.cumsum(durations) - durations, durations)
        run_len = np.repeat(durations, durations)
        pos = np.arange(cols.shape[0]) - starts
        ramp = (2.0 * (pos + 0.5) / run_len - 1.0)[:, None] * self.ramp_dir[None, :]
        return (cols + self.cfg.ramp_scale * ramp + speaker.bias[None, :]).astype(np.float32)


_DEFAULT_WORLD: World | None = None


def _default_world() -> World:
    global _DEFAULT_WORLD
    if _DEFAULT_WORLD is None:
        _DEFAULT_WORLD = World()
    return _DEFAULT_WORLD


def gen_speaker(seed: int, world: World | None = None, band: str | None = None) -> SyntheticSpeaker:
    return (world or _default_world()).gen_speaker(seed, band)


def gen_utterance(content_seed: int, speaker: SyntheticSpeaker, world: World | None = None, noise: bool = True) -> SyntheticUtterance:
    return (world or _default_world()).gen_utterance(content_seed, speaker, noise)


def oracle_render(units, durations, speaker: SyntheticSpeaker, world: World | None = None) -> np.ndarray:
    return (world or _default_world()).oracle_render(units, durations, speaker)


def pps(durations, units=None, silence_id: int | None = None, token_seconds: float = FRAME_SECONDS) -> float:
    """Units per second over voiced (non-silence) runs."""
    durations = np.asarray(durations, dtype=np.float64).reshape(-1)
    if durations.size == 0:
        raise InvalidArgumentError("empty duration sequence")
    if units is not None and silence_id is not None:
        voiced = np.asarray(units).reshape(-1) != silence_id
        durations = durations[voiced]
    if durations.size == 0 or durations.sum() <= 0:
        raise InvalidArgumentError("no voiced units")
    return float(durations.size / (durations.sum() * token_seconds))


def classify_rate(pps_value: float) -> RateClass:
    if pps_value < SLOW_BELOW:
        return RateClass.SLOW
    if pps_value > FAST_ABOVE:
        return RateClass.FAST
    return RateClass.NORMAL


def nearest_speaker(features, units, durations, speakers, world: World) -> str:
    """Speaker whose oracle rendering of ``(units, durations)`` is closest to ``features``."""
    errs = [np.abs(world.oracle_render(units, durations, s) - features).mean() for s in speakers]
    return speakers[int(np.argmin(errs))].id


@dataclass
class Corpus:
    world: World
    speakers: dict
    train: list
    test: list
    meta: dict = field(default_factory=dict)

    @cached_property
    def by_id(self) -> dict:
        return {u.id: u for u in self.train + self.test}

    def by_speaker(self, split: str = "test") -> dict:
        out: dict = {}
        for u in getattr(self, split):
            out.setdefault(u.speaker_id, []).append(u)
        return out

    def speaker_class(self, speaker_id: str) -> RateClass:
        """Rate class implied by the speaker's noise-free law averaged over the test split."""
        spk = self.speakers[speaker_id]
        utts = [u for u in self.test if u.speaker_id == speaker_id] or self.train
        vals = [pps(self.world.law_durations(u.content.units, spk), u.content.units, self.world.cfg.silence_id) for u in utts]
        return classify_rate(float(np.mean(vals)))


def generate_corpus(cfg: WorldConfig | None = None) -> Corpus:
    world = World(cfg)
    c = world.cfg
    speakers = {}
    for i in range(c.n_speakers):
        spk = world.gen_speaker(1000 + i, BAND_ORDER[i % len(BAND_ORDER)])
        speakers[spk.id] = spk
    ids = list(speakers)
    rng = np.random.default_rng([c.seed, 4])
    assign = rng.integers(0, c.n_speakers, size=c.n_train + c.n_test)
    utts = [world.gen_utterance(j, speakers[ids[assign[j]]]) for j in range(c.n_train + c.n_test)]
    return Corpus(world, speakers, utts[: c.n_train], utts[c.n_train :])


def save_corpus(corpus: Corpus, root) -> None:
    """Write ``manifest.json``, ``tokens.jsonl`` and ``features/<id>.safetensors``."""
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": 1,
        "world": corpus.world.cfg.to_dict(),
        "speakers": [{"id": s.id, "seed": s.seed, "band": s.band} for s in corpus.speakers.values()],
        "splits": {"train": [u.id for u in corpus.train], "test": [u.id for u in corpus.test]},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    with open(root / "tokens.jsonl", "w") as fh:
        for u in corpus.train + corpus.test:
            rec = {"id": u.id, "content_seed": u.content_seed, "speaker": u.speaker_id, "tokens": u.tokens.tolist()}
            fh.write(json.dumps(rec) + "\n")
    for u in corpus.train + corpus.test:
        arrays.save(root / "features" / f"{u.id}.safetensors",
                    {"features": u.features, "law_durations": u.law_durations},
                    {"id": u.id, "speaker": u.speaker_id, "frame_seconds": FRAME_SECONDS})


def read_token_corpus(path) -> list[dict]:
    """Read a JSON-lines token corpus (one ``{"tokens": [...], "speaker": id}`` per line)."""
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "tokens" not in rec or "speaker" not in rec:
                raise FormatError(f"{path}:{n}: record needs 'tokens' and 'speaker'")
            out.append(rec)
    return out


def load_corpus(root) -> Corpus:
    root = Path(root)
    if not (root / "manifest.json").exists():
        raise FormatError(f"no manifest.json under {root}")
    manifest = json.loads((root / "manifest.json").read_text())
    world = World(WorldConfig(**manifest["world"]))
    speakers = {}
    for s in manifest["speakers"]:
        speakers[s["id"]] = world.gen_speaker(s["seed"], s["band"], s["id"])
    utts = {}
    for rec in read_token_corpus(root / "tokens.jsonl"):
        arrs, _ = arrays.load(root / "features" / f"{rec['id']}.safetensors")
        utts[rec["id"]] = SyntheticUtterance(rec["id"], rec["content_seed"], rec["speaker"], rle_encode(rec["tokens"]),
                                             arrs["law_durations"], arrs["features"])
    split = manifest["splits"]
    return Corpus(world, speakers, [utts[i] for i in split["train"]], [utts[i] for i in split["test"]], manifest)
