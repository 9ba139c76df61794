"""Voice conversion on the synthetic world: convert, pair construction and metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .denoiser import Denoiser, DenoiserConditioning
from .duration import DurationModel, duration_accuracy, mask_predict_decode
from .errors import ConfigurationError, InvalidArgumentError
from .sampler import SamplerConfig, sample
from .synth import Corpus, RateClass, SyntheticUtterance, classify_rate, pps

DURATION_MODES = ("model", "source", "oracle")


@dataclass
class Prompt:
    units: np.ndarray
    durations: np.ndarray
    features: np.ndarray

    @classmethod
    def from_utterance(cls, utt: SyntheticUtterance, max_units: int | None = 24) -> "Prompt":
        n = len(utt.content) if max_units is None else min(max_units, len(utt.content))
        units, durs = utt.content.units[:n], utt.content.durations[:n]
        return cls(units, durs, utt.features[: int(durs.sum())])

    @property
    def n_frames(self) -> int:
        return int(self.durations.sum())


@dataclass
class ConversionResult:
    features: np.ndarray  # prompt frames followed by generated frames
    generated: np.ndarray
    durations: np.ndarray
    prompt_frames: int


def decode_durations(dm: DurationModel, units, spk_vector, prompt: Prompt | None, T: int = 10) -> np.ndarray:
    p = None if prompt is None else (prompt.units, prompt.durations)
    durs, _ = mask_predict_decode(dm, units, spk_vector, T=T, prompt=p)
    return durs


@torch.no_grad()
def convert_batch(den: Denoiser, items, sampler_cfg: SamplerConfig, rng: np.random.Generator) -> list[ConversionResult]:
    """Generate features for ``items`` = list of ``(units, durations, spk_vector, prompt)``."""
    if not items:
        return []
    all_units = [np.r_[p.units, u] for u, _, _, p in items]
    all_durs = [np.r_[p.durations, d] for _, d, _, p in items]
    content, frame_mask = den.encode_content(all_units, all_durs)
    B, Fr = frame_mask.shape
    C = den.cfg.channels
    context = content.new_zeros(B, Fr, C)
    prompt_mask = torch.zeros(B, Fr, dtype=torch.bool)
    for b, (_, _, _, p) in enumerate(items):
        context[b, : p.n_frames] = torch.as_tensor(p.features, dtype=context.dtype)
        prompt_mask[b, : p.n_frames] = True
    spk = torch.as_tensor(np.stack([s for _, _, s, _ in items]), dtype=content.dtype)
    cond = DenoiserConditioning(content, context, spk, torch.zeros(B, dtype=torch.bool), prompt_mask, frame_mask)
    x = sample(den, cond, sampler_cfg, rng).cpu().numpy()
    out = []
    for b, (u, d, _, p) in enumerate(items):
        n = p.n_frames + int(np.sum(d))
        out.append(ConversionResult(x[b, :n], x[b, p.n_frames : n], np.asarray(d), p.n_frames))
    return out


def convert(dm: DurationModel | None, den: Denoiser, source_units, target_spk, prompt: Prompt, sampler_cfg: SamplerConfig,
            rng: np.random.Generator, durations=None, T: int = 10) -> ConversionResult:
    """Source units -> durations for the target speaker -> length regulation -> shortcut sampling.

    Passing ``durations`` bypasses the duration model.
    """
    source_units = np.asarray(source_units, dtype=np.int64)
    if durations is None:
        if dm is None:
            raise ConfigurationError("need a duration model or explicit durations")
        durations = decode_durations(dm, source_units, target_spk, prompt, T)
    durations = np.asarray(durations, dtype=np.int64)
    if len(durations) != len(source_units):
        raise InvalidArgumentError("durations do not match the source units")
    return convert_batch(den, [(source_units, durations, np.asarray(target_spk), prompt)], sampler_cfg, rng)[0]


def utterance_class(corpus: Corpus, utt: SyntheticUtterance) -> RateClass:
    return classify_rate(pps(utt.content.durations, utt.content.units, corpus.world.cfg.silence_id))


def build_vc_pairs(corpus: Corpus, n_pairs: int, seed: int = 0, cross_rate: bool = True) -> list[tuple[str, str]]:
    """Non-parallel ``(source_id, target_prompt_id)`` pairs from the test split.

    Source and target come from different speakers and, with ``cross_rate``,
    from different rhythm classes.
    """
    rng = np.random.default_rng([seed, 31])
    test = corpus.test
    classes = [utterance_class(corpus, u) for u in test]
    pairs: list = []
    seen = set()
    attempts = 0
    while len(pairs) < n_pairs:
        attempts += 1
        if attempts > 200 * n_pairs:
            raise InvalidArgumentError(f"could only build {len(pairs)} pairs")
        i, j = (int(v) for v in rng.integers(0, len(test), size=2))
        if test[i].speaker_id == test[j].speaker_id or (i, j) in seen:
            continue
        if cross_rate and classes[i] == classes[j]:
            continue
        seen.add((i, j))
        pairs.append((test[i].id, test[j].id))
    return pairs


def identity_pairs(corpus: Corpus, n_pairs: int, seed: int = 0) -> list[tuple[str, str]]:
    rng = np.random.default_rng([seed, 32])
    idx = rng.choice(len(corpus.test), size=min(n_pairs, len(corpus.test)), replace=False)
    return [(corpus.test[i].id, corpus.test[i].id) for i in sorted(idx)]


def evaluate_vc(dm: DurationModel | None, den: Denoiser | None, corpus: Corpus, pairs, sampler_cfg: SamplerConfig,
                seed: int = 0, durations: str = "model", T: int = 10, prompt_units: int = 24,
                batch_size: int = 16) -> dict:
    """Convert every pair and aggregate duration, rhythm and oracle-feature metrics.

    ``durations`` picks where converted durations come from: the duration
    model (``"model"``), the source utterance (``"source"``, the no-duration
    ablation), or the target speaker's noise-free law (``"oracle"``).
    With ``den=None`` only duration and rhythm metrics are computed.
    """
    if durations not in DURATION_MODES:
        raise InvalidArgumentError(f"durations must be one of {DURATION_MODES}")
    if durations == "model" and dm is None:
        raise ConfigurationError("duration mode 'model' needs a trained duration model")
    if dm is not None and dm.cfg.n_units < corpus.world.cfg.vocab:
        raise ConfigurationError("duration model vocabulary is smaller than the corpus vocabulary")
    if den is not None and den.cfg.channels != corpus.world.cfg.channels:
        raise ConfigurationError("denoiser channel count does not match the corpus")
    world, sil = corpus.world, corpus.world.cfg.silence_id
    rng = np.random.default_rng([seed, 33])
    records, items = [], []
    for src_id, tgt_id in pairs:
        src, tgt = corpus.by_id[src_id], corpus.by_id[tgt_id]
        spk = corpus.speakers[tgt.speaker_id]
        prompt = Prompt.from_utterance(tgt, prompt_units)
        units = src.content.units
        if durations == "model":
            d = decode_durations(dm, units, spk.spk_vector, prompt, T)
        elif durations == "source":
            d = src.content.durations
        else:
            d = world.law_durations(units, spk)
        law = world.law_durations(units, spk)
        gen_pps = pps(d, units, sil)
        tgt_class = utterance_class(corpus, tgt)
        records.append({
            "source": src_id, "target": tgt_id, "target_speaker": spk.id,
            "target_class": tgt_class.value, "generated_pps": gen_pps,
            "generated_class": classify_rate(gen_pps).value,
            "_durations": d, "_law": law,
        })
        items.append((units, d, spk.spk_vector, prompt))

    if den is not None:
        for start in range(0, len(items), batch_size):
            chunk = items[start : start + batch_size]
            results = convert_batch(den, chunk, sampler_cfg, rng)
            for k, res in enumerate(results):
                rec = records[start + k]
                spk = corpus.speakers[rec["target_speaker"]]
                ref = world.oracle_render(chunk[k][0], chunk[k][1], spk)
                rec["oracle_mae"] = float(np.abs(res.generated.astype(np.float64) - ref).mean())

    pred = np.concatenate([r.pop("_durations") for r in records])
    law = np.concatenate([r.pop("_law") for r in records])
    acc_abs, acc1, acc5 = duration_accuracy(pred, law)
    match = np.array([r["generated_class"] == r["target_class"] for r in records])
    per_class = {}
    for cls in RateClass:
        sel = [r for r in records if r["target_class"] == cls.value]
        if sel:
            per_class[cls.value] = {
                "n": len(sel),
                "mean_pps": float(np.mean([r["generated_pps"] for r in sel])),
                "accuracy": float(np.mean([r["generated_class"] == r["target_class"] for r in sel])),
            }
    out = {
        "n_pairs": len(records),
        "durations": durations,
        "rhythm_accuracy": float(match.mean()) if len(match) else float("nan"),
        "per_class": per_class,
        "acc_absolute": acc_abs, "acc_1": acc1, "acc_5": acc5,
        "pairs": records,
    }
    if den is not None:
        out["oracle_mae"] = float(np.mean([r["oracle_mae"] for r in records]))
        out["nfe"] = sampler_cfg.nfe
        out["mode"] = sampler_cfg.mode.value
    return out


def held_out_duration_accuracy(dm: DurationModel, corpus: Corpus, use_prompt: bool, T: int = 10,
                               prompt_units: int = 24, limit: int | None = None) -> tuple[float, float, float]:
    """Decode every test utterance with its own speaker; score against its actual durations.

    With ``use_prompt`` the first ``prompt_units`` units of another test
    utterance by the same speaker are given as an unmasked prompt.
    """
    by_spk = corpus.by_speaker("test")
    preds, truth = [], []
    for u in corpus.test[:limit]:
        spk = corpus.speakers[u.speaker_id]
        prompt = None
        if use_prompt:
            pool = [v for v in by_spk[u.speaker_id] if v.id != u.id] or [u]
            prompt = Prompt.from_utterance(pool[0], prompt_units)
        preds.append(decode_durations(dm, u.content.units, spk.spk_vector, prompt, T))
        truth.append(u.content.durations)
    return duration_accuracy(np.concatenate(preds), np.concatenate(truth))
