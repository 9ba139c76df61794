"""Masked generative transformer for unit-level durations.

The sequence fed to the transformer is a speaker prefix followed by one
position per deduplicated unit, each holding ``[unit embedding | duration
embedding]``. Masked durations use a dedicated MASK embedding. Training
minimises cross-entropy at masked positions; inference runs mask-predict
iterative decoding with a linear re-masking schedule.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import DEFAULT_D_MAX
from .errors import InvalidArgumentError
from .masking import decode_decay


@dataclass
class DurationModelConfig:
    n_units: int = 33
    layers: int = 4
    heads: int = 8
    hidden_dim: int = 256
    d_max: int = DEFAULT_D_MAX
    spk_dim: int = 192
    rope_base: float = 10000.0
    dropout: float = 0.0
    ffn_mult: float = 8 / 3

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise InvalidArgumentError("hidden_dim must be divisible by heads")
        if self.hidden_dim % 2:
            raise InvalidArgumentError("hidden_dim must be even")
        if (self.hidden_dim // self.heads) % 2:
            raise InvalidArgumentError("head dimension must be even for rotary embeddings")

    @property
    def duration_vocab(self) -> int:
        # class 0 is never a valid duration
        return self.d_max + 1

    @property
    def mask_id(self) -> int:
        return self.d_max + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def full_scale_preset(cls, **kw) -> "DurationModelConfig":
        base = dict(layers=8, heads=8, hidden_dim=512)
        base.update(kw)
        return cls(**base)


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


def rotary_tables(n: int, head_dim: int, base: float, dtype, device):
    inv = 1.0 / (base ** (torch.arange(0, head_dim, 2, dtype=torch.float64, device=device) / head_dim))
    ang = torch.arange(n, dtype=torch.float64, device=device)[:, None] * inv[None, :]
    return ang.cos().to(dtype), ang.sin().to(dtype)


def apply_rotary(x, cos, sin):
    # x: (B, H, N, Dh), rotate interleaved pairs
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = torch.stack((x1 * cos - x2 * sin, x1 * sin + x2 * cos), dim=-1)
    return out.flatten(-2)


class RotaryAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim, bias=False)
        self.out = nn.Linear(dim, dim, bias=False)
        self.dropout = dropout

    def forward(self, x, cos, sin, key_mask=None):
        B, N, D = x.shape
        q, k, v = self.qkv(x).view(B, N, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        q, k = apply_rotary(q, cos, sin), apply_rotary(k, cos, sin)
        attn_mask = None if key_mask is None else key_mask[:, None, None, :]
        y = F.scaled_dot_product_attention(
            q, k, v, attn_mask=attn_mask, dropout_p=self.dropout if self.training else 0.0
        )
        return self.out(y.transpose(1, 2).reshape(B, N, D))


class SwiGLU(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.w1 = nn.Linear(dim, hidden, bias=False)
        self.w3 = nn.Linear(dim, hidden, bias=False)
        self.w2 = nn.Linear(hidden, dim, bias=False)

    def forward(self, x):
        return self.w2(F.silu(self.w1(x)) * self.w3(x))


class LlamaBlock(nn.Module):
    def __init__(self, cfg: DurationModelConfig):
        super().__init__()
        hidden = int(cfg.ffn_mult * cfg.hidden_dim)
        self.attn_norm = RMSNorm(cfg.hidden_dim)
        self.attn = RotaryAttention(cfg.hidden_dim, cfg.heads, cfg.dropout)
        self.ffn_norm = RMSNorm(cfg.hidden_dim)
        self.ffn = SwiGLU(cfg.hidden_dim, hidden)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, cos, sin, key_mask=None):
        x = x + self.drop(self.attn(self.attn_norm(x), cos, sin, key_mask))
        return x + self.drop(self.ffn(self.ffn_norm(x)))


class DurationModel(nn.Module):
    def __init__(self, cfg: DurationModelConfig):
        super().__init__()
        self.cfg = cfg
        half = cfg.hidden_dim // 2
        self.unit_emb = nn.Embedding(cfg.n_units, half)
        # ids 0..d_max are durations (0 unused), d_max + 1 is MASK
        self.dur_emb = nn.Embedding(cfg.d_max + 2, half)
        self.spk_proj = nn.Linear(cfg.spk_dim, cfg.hidden_dim)
        self.blocks = nn.ModuleList(LlamaBlock(cfg) for _ in range(cfg.layers))
        self.norm = RMSNorm(cfg.hidden_dim)
        self.head = nn.Linear(cfg.hidden_dim, cfg.duration_vocab)
        self.apply(self._init)

    @staticmethod
    def _init(m):
        if isinstance(m, (nn.Linear, nn.Embedding)):
            nn.init.normal_(m.weight, std=0.02)
            if getattr(m, "bias", None) is not None:
                nn.init.zeros_(m.bias)

    def build_inputs(self, units, durations, mask, spk):
        """Assemble the ``(B, N + 1, hidden)`` input sequence.

        ``durations`` at positions where ``mask`` is True are ignored and
        replaced by the MASK embedding.
        """
        if units.shape != durations.shape or units.shape != mask.shape:
            raise InvalidArgumentError(
                f"units {tuple(units.shape)}, durations {tuple(durations.shape)} and "
                f"mask {tuple(mask.shape)} must agree"
            )
        if spk.ndim != 2 or spk.shape[0] != units.shape[0]:
            raise InvalidArgumentError("speaker batch does not match unit batch")
        dur_ids = torch.where(mask, torch.full_like(durations, self.cfg.mask_id), durations)
        dur_ids = dur_ids.clamp(0, self.cfg.mask_id)
        body = torch.cat([self.unit_emb(units), self.dur_emb(dur_ids)], dim=-1)
        prefix = self.spk_proj(spk)[:, None, :]
        return torch.cat([prefix, body], dim=1)

    def forward(self, units, durations, mask, spk, pad_mask=None):
        """Return logits ``(B, N, d_max + 1)`` with class 0 disabled.

        ``pad_mask`` is True on real positions.
        """
        x = self.build_inputs(units, durations, mask, spk)
        B, L, _ = x.shape
        cos, sin = rotary_tables(L, self.cfg.hidden_dim // self.cfg.heads, self.cfg.rope_base, x.dtype, x.device)
        key_mask = None
        if pad_mask is not None:
            key_mask = torch.cat([torch.ones_like(pad_mask[:, :1]), pad_mask], dim=1)
        for blk in self.blocks:
            x = blk(x, cos, sin, key_mask)
        logits = self.head(self.norm(x[:, 1:]))
        invalid = torch.zeros(self.cfg.duration_vocab, dtype=torch.bool, device=logits.device)
        invalid[0] = True
        return logits.masked_fill(invalid, float("-inf"))

    def predict(self, units, durations, mask, spk, pad_mask=None):
        """Greedy prediction: ``(argmax duration, its probability, full distribution)``."""
        probs = self.forward(units, durations, mask, spk, pad_mask).softmax(-1)
        conf, value = probs.max(-1)
        return value, conf, probs


def dm_loss(model: DurationModel, units, true_durs, mask, spk, pad_mask=None):
    """Mean cross-entropy over masked (and non-padded) positions."""
    if torch.any((true_durs < 1) | (true_durs > model.cfg.d_max)):
        raise InvalidArgumentError(f"durations must lie in [1, {model.cfg.d_max}]")
    sel = mask if pad_mask is None else mask & pad_mask
    if not torch.any(sel):
        raise InvalidArgumentError("no masked positions to score")
    logits = model(units, true_durs, mask, spk, pad_mask)
    return F.cross_entropy(logits[sel], true_durs[sel])


@torch.no_grad()
def mask_predict_decode(model: DurationModel, units, spk, T: int = 10, prompt=None, trace=None):
    """Decode durations for ``units`` by mask-predict.

    ``prompt`` is an optional ``(prompt_units, prompt_durations)`` pair that
    is prepended and never masked. Returns ``(durations, confidences)`` as
    numpy arrays for the non-prompt positions. If ``trace`` is a list, the
    boolean mask used at each iteration is appended to it.
    """
    if T < 1:
        raise InvalidArgumentError(f"T must be >= 1, got {T}")
    units = np.asarray(units, dtype=np.int64).reshape(-1)
    spk = np.asarray(spk).reshape(-1)
    n = len(units)
    if n == 0:
        raise InvalidArgumentError("cannot decode an empty unit sequence")
    if prompt is not None:
        p_units = np.asarray(prompt[0], dtype=np.int64).reshape(-1)
        p_durs = np.asarray(prompt[1], dtype=np.int64).reshape(-1)
        if len(p_units) != len(p_durs):
            raise InvalidArgumentError("prompt units and durations differ in length")
    else:
        p_units = np.zeros(0, dtype=np.int64)
        p_durs = np.zeros(0, dtype=np.int64)
    n_p = len(p_units)

    param = next(model.parameters())
    all_units = torch.as_tensor(np.r_[p_units, units], device=param.device)[None]
    durs = torch.as_tensor(np.r_[np.clip(p_durs, 1, model.cfg.d_max), np.ones(n, np.int64)], device=param.device)[None]
    spk_t = torch.as_tensor(spk, dtype=param.dtype, device=param.device)[None]
    conf = torch.zeros(n, dtype=torch.float64)

    was_training = model.training
    model.eval()
    try:
        masked = np.ones(n, dtype=bool)
        for t in range(T):
            if t > 0:
                k = decode_decay(n, T, t)
                if k == 0:
                    break
                # stable sort keeps the lowest index first among equal confidences
                order = np.argsort(conf.numpy(), kind="stable")
                masked = np.zeros(n, dtype=bool)
                masked[order[:k]] = True
            if trace is not None:
                trace.append(masked.copy())
            full_mask = torch.as_tensor(np.r_[np.zeros(n_p, bool), masked], device=param.device)[None]
            value, c, _ = model.predict(all_units, durs, full_mask, spk_t)
            sel = torch.as_tensor(masked)
            body = durs[0, n_p:]
            body[sel] = value[0, n_p:][sel]
            conf[sel] = c[0, n_p:][sel].double().cpu()
    finally:
        model.train(was_training)
    return durs[0, n_p:].cpu().numpy().copy(), conf.numpy()


def duration_accuracy(pred, truth) -> tuple[float, float, float]:
    """``(ACC_Absolute, ACC_1, ACC_5)``: exact match and within 1 / 5 frames."""
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.shape != truth.shape:
        raise InvalidArgumentError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise InvalidArgumentError("empty duration sequences")
    err = np.abs(pred.astype(np.int64) - truth.astype(np.int64))
    return float(np.mean(err == 0)), float(np.mean(err <= 1)), float(np.mean(err <= 5))
