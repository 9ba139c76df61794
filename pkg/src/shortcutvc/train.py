"""Training loops for the duration model and the shortcut denoiser."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .denoiser import Denoiser, DenoiserConditioning, DiTConfig, cfg_dropout
from .duration import DurationModel, DurationModelConfig, dm_loss
from .errors import ConfigurationError, InvalidArgumentError
from .masking import sample_duration_mask, sample_mask_ratio, sample_span_mask
from .shortcut import SCFMConfig, TimeGrid, cfm_loss, make_cfm_batch, make_shortcut_batch, scfm_loss
from .synth import Corpus

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimiser and loop settings. Defaults are the full-scale values."""

    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    warmup_steps: int = 2000
    total_steps: int = 100_000
    batch_size: int = 32
    seed: int = 0
    grad_clip: float = 1.0
    log_every: int = 1

    def __post_init__(self):
        if self.warmup_steps > self.total_steps:
            raise InvalidArgumentError("warmup_steps must not exceed total_steps")
        if self.total_steps < 0 or self.batch_size < 1 or self.lr < 0 or self.warmup_steps < 0:
            raise InvalidArgumentError("steps, batch size and learning rate must be non-negative")


@dataclass
class DurationTrainConfig(TrainConfig):
    # fraction of items prefixed by an unmasked same-speaker prompt, as seen at inference
    prompt_prob: float = 0.3
    prompt_units: int = 24


@dataclass
class DecoderTrainConfig(TrainConfig):
    k: float = 0.7
    sigma_min: float = 0.0
    p_drop: float = 0.2
    mask_lo: float = 0.7
    mask_hi: float = 1.0
    segment_frames: int = 128
    n_base: int = 128
    objective: str = "scfm"  # or "cfm" for the vanilla control

    def __post_init__(self):
        super().__post_init__()
        if self.objective not in ("scfm", "cfm"):
            raise InvalidArgumentError(f"unknown objective {self.objective!r}")
        SCFMConfig(self.k, self.sigma_min)


def warmup_lr(step: int, base_lr: float, warmup: int) -> float:
    """Linear warmup to ``base_lr`` over ``warmup`` steps, then constant. ``step`` is 1-based."""
    if warmup <= 0:
        return base_lr
    return base_lr * min(step, warmup) / warmup


def make_optimizer(model, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), foreach=False)


@dataclass
class TrainState:
    model: torch.nn.Module
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    step: int = 0
    metrics: list = field(default_factory=list)
    timing: list = field(default_factory=list)


def _optim_step(state: TrainState, loss, cfg: TrainConfig) -> float:
    lr = warmup_lr(state.step + 1, cfg.lr, cfg.warmup_steps)
    for g in state.optimizer.param_groups:
        g["lr"] = lr
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if cfg.grad_clip:
        torch.nn.utils.clip_grad_norm_(state.model.parameters(), cfg.grad_clip)
    state.optimizer.step()
    state.step += 1
    return lr


def write_jsonl(path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


# ------------------------------------------------------------------ duration


def duration_batch(corpus: Corpus, idx, rng: np.random.Generator, d_max: int, prompt_prob: float = 0.0,
                   prompt_units: int = 24):
    utts = [corpus.train[i] for i in idx]
    by_spk = corpus.by_speaker("train") if prompt_prob > 0 else {}
    rows = []
    for u in utts:
        p_units = p_durs = np.zeros(0, dtype=np.int64)
        if prompt_prob > 0 and rng.random() < prompt_prob:
            pool = by_spk[u.speaker_id]
            other = pool[int(rng.integers(len(pool)))]
            p_units = other.content.units[:prompt_units]
            p_durs = other.content.durations[:prompt_units]
        rows.append((p_units, p_durs, u))
    n = max(len(pu) + len(u.content) for pu, _, u in rows)
    B = len(utts)
    units = torch.zeros(B, n, dtype=torch.long)
    durs = torch.ones(B, n, dtype=torch.long)
    mask = torch.zeros(B, n, dtype=torch.bool)
    pad = torch.zeros(B, n, dtype=torch.bool)
    for b, (pu, pd, u) in enumerate(rows):
        P, L = len(pu), len(u.content)
        units[b, : P + L] = torch.from_numpy(np.r_[pu, u.content.units])
        durs[b, : P + L] = torch.from_numpy(np.clip(np.r_[pd, u.content.durations], 1, d_max))
        p = sample_mask_ratio(rng)
        mask[b, P : P + L] = torch.from_numpy(sample_duration_mask(L, p, rng))
        pad[b, : P + L] = True
    spk = torch.from_numpy(np.stack([corpus.speakers[u.speaker_id].spk_vector for u in utts])).float()
    return units, durs, mask, spk, pad


def new_duration_state(model_cfg: DurationModelConfig, cfg: DurationTrainConfig) -> TrainState:
    torch.manual_seed(cfg.seed)
    model = DurationModel(model_cfg)
    return TrainState(model, make_optimizer(model, cfg), np.random.default_rng([cfg.seed, 11]))


def train_duration(corpus: Corpus, model_cfg: DurationModelConfig, cfg: DurationTrainConfig, state: TrainState | None = None,
                   steps: int | None = None) -> TrainState:
    """Masked cross-entropy training with sine-schedule masking."""
    if model_cfg.n_units < corpus.world.cfg.vocab or model_cfg.spk_dim != corpus.world.cfg.spk_dim:
        raise ConfigurationError("duration model vocabulary / speaker size does not match the corpus")
    state = state or new_duration_state(model_cfg, cfg)
    state.model.train()
    end = cfg.total_steps if steps is None else state.step + steps
    while state.step < end:
        t0 = time.perf_counter()
        idx = state.rng.integers(0, len(corpus.train), size=cfg.batch_size)
        units, durs, mask, spk, pad = duration_batch(corpus, idx, state.rng, model_cfg.d_max,
                                                        cfg.prompt_prob, cfg.prompt_units)
        loss = dm_loss(state.model, units, durs, mask, spk, pad)
        lr = _optim_step(state, loss, cfg)
        if state.step % cfg.log_every == 0:
            state.metrics.append({"step": state.step, "loss": loss.item(), "lr": lr})
            state.timing.append({"step": state.step, "wall_ms": 1000 * (time.perf_counter() - t0)})
    return state


# ------------------------------------------------------------------ decoder


def decoder_batch(model: Denoiser, corpus: Corpus, idx, rng: np.random.Generator, cfg: DecoderTrainConfig):
    """Crop segments, span-mask them and assemble conditions. Returns ``(x1, cond, loss_mask)``."""
    utts = [corpus.train[i] for i in idx]
    content, _ = model.encode_content([u.content.units for u in utts], [u.content.durations for u in utts])
    L = min(cfg.segment_frames, max(u.n_frames for u in utts))
    B, C = len(utts), corpus.world.cfg.channels
    x1 = torch.zeros(B, L, C)
    seg_content = content.new_zeros(B, L, content.shape[-1])
    valid = torch.zeros(B, L, dtype=torch.bool)
    span = torch.zeros(B, L, dtype=torch.bool)
    for b, u in enumerate(utts):
        n = min(L, u.n_frames)
        start = int(rng.integers(0, u.n_frames - n + 1))
        x1[b, :n] = torch.from_numpy(u.features[start : start + n])
        seg_content[b, :n] = content[b, start : start + n]
        valid[b, :n] = True
        span[b, :n] = torch.from_numpy(sample_span_mask(n, cfg.mask_lo, cfg.mask_hi, rng))
    prompt = valid & ~span
    spk = torch.from_numpy(np.stack([corpus.speakers[u.speaker_id].spk_vector for u in utts])).float()
    cond = DenoiserConditioning(seg_content, x1 * prompt[..., None], spk, torch.zeros(B, dtype=torch.bool), prompt, valid)
    cond = cfg_dropout(cond, cfg.p_drop, rng)
    return x1, cond, span & valid


def new_decoder_state(model_cfg: DiTConfig, cfg: DecoderTrainConfig) -> TrainState:
    torch.manual_seed(cfg.seed)
    model = Denoiser(model_cfg)
    return TrainState(model, make_optimizer(model, cfg), np.random.default_rng([cfg.seed, 12]))


def train_decoder(corpus: Corpus, model_cfg: DiTConfig, cfg: DecoderTrainConfig, state: TrainState | None = None,
                  steps: int | None = None) -> TrainState:
    """Shortcut flow-matching training (or vanilla OT-CFM when ``cfg.objective == "cfm"``)."""
    wc = corpus.world.cfg
    if model_cfg.channels != wc.channels or model_cfg.n_units < wc.vocab or model_cfg.spk_dim != wc.spk_dim:
        raise ConfigurationError("denoiser configuration does not match the corpus")
    state = state or new_decoder_state(model_cfg, cfg)
    state.model.train()
    grid = TimeGrid(cfg.n_base)
    scfm = SCFMConfig(cfg.k, cfg.sigma_min)
    end = cfg.total_steps if steps is None else state.step + steps
    while state.step < end:
        t0 = time.perf_counter()
        idx = state.rng.integers(0, len(corpus.train), size=cfg.batch_size)
        x1, cond, loss_mask = decoder_batch(state.model, corpus, idx, state.rng, cfg)
        if cfg.objective == "cfm":
            batch = make_cfm_batch(x1, state.rng, grid)
            loss = cfm_loss(state.model, batch, cond, cfg.sigma_min, loss_mask)
            loss_fm, loss_sc = loss, torch.zeros(())
        else:
            batch = make_shortcut_batch(x1, state.rng, scfm, grid)
            loss, loss_fm, loss_sc = scfm_loss(state.model, batch, cond, scfm, loss_mask)
        lr = _optim_step(state, loss, cfg)
        if state.step % cfg.log_every == 0:
            state.metrics.append({"step": state.step, "loss_fm": loss_fm.item(), "loss_sc": loss_sc.item(), "lr": lr})
            state.timing.append({"step": state.step, "wall_ms": 1000 * (time.perf_counter() - t0)})
    return state


# ------------------------------------------------------------------ checkpoints


def to_checkpoint(kind: str, state: TrainState, model_cfg, train_cfg) -> ckpt_io.Checkpoint:
    return ckpt_io.capture(kind, state.model, model_cfg.to_dict(), state.step, state.optimizer, state.rng,
                           asdict(train_cfg))


def resume(ckpt: ckpt_io.Checkpoint) -> TrainState:
    if ckpt.kind == "duration":
        model_cfg, cfg = DurationModelConfig(**ckpt.model_config), DurationTrainConfig(**ckpt.train_config)
        model = DurationModel(model_cfg)
    elif ckpt.kind == "decoder":
        model_cfg, cfg = DiTConfig(**ckpt.model_config), DecoderTrainConfig(**ckpt.train_config)
        model = Denoiser(model_cfg)
    else:
        raise ConfigurationError(f"cannot resume a {ckpt.kind!r} checkpoint")
    model.load_state_dict(ckpt.state_dict)
    opt = make_optimizer(model, cfg)
    ckpt_io.restore_optimizer(opt, ckpt)
    return TrainState(model, opt, ckpt_io.restore_rng(ckpt), ckpt.step)


def load_duration_model(ckpt: ckpt_io.Checkpoint) -> DurationModel:
    if ckpt.kind != "duration":
        raise ConfigurationError(f"expected a duration checkpoint, got {ckpt.kind!r}")
    model = DurationModel(DurationModelConfig(**ckpt.model_config))
    model.load_state_dict(ckpt.state_dict)
    return model.eval()


def load_denoiser(ckpt: ckpt_io.Checkpoint) -> Denoiser:
    if ckpt.kind != "decoder":
        raise ConfigurationError(f"expected a decoder checkpoint, got {ckpt.kind!r}")
    model = Denoiser(DiTConfig(**ckpt.model_config))
    model.load_state_dict(ckpt.state_dict)
    return model.eval()
