"""Step-size-conditioned diffusion transformer for acoustic features.

The network predicts a shortcut velocity for frames ``x_t`` given
frame-aligned content embeddings, a span-masked acoustic context, a speaker
vector, the flow time ``t`` and the step size ``d``. Conditions are
concatenated along channels; ``(t, d)`` drives AdaLN-zero modulation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import length_regulate
from .errors import InvalidArgumentError
from .shortcut import TimeGrid


@dataclass
class DiTConfig:
    layers: int = 4
    heads: int = 4
    model_dim: int = 128
    channels: int = 16
    n_units: int = 33
    content_dim: int = 64
    spk_dim: int = 192
    spk_proj_dim: int = 32
    freq_dim: int = 64
    mlp_ratio: float = 4.0
    encoder_layers: int = 2
    encoder_heads: int = 4
    encoder_kernel: int = 5
    pos_kernel: int = 15
    n_base: int = 128
    tie_base_step: bool = True

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise InvalidArgumentError("model_dim must be divisible by heads")
        if self.content_dim % self.encoder_heads:
            raise InvalidArgumentError("content_dim must be divisible by encoder_heads")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def full_scale_preset(cls, **kw) -> "DiTConfig":
        """Full-size decoder: 22 layers, 16 heads, 1024-dim, 80 mel channels."""
        base = dict(layers=22, heads=16, model_dim=1024, channels=80, content_dim=512,
                    spk_proj_dim=128, freq_dim=256, encoder_layers=6, encoder_heads=8)
        base.update(kw)
        return cls(**base)


@dataclass
class DenoiserConditioning:
    """Per-batch conditions for the denoiser.

    ``prompt_mask`` marks frames whose context is given (the speaker
    prompt); ``frame_mask`` marks real (non-padded) frames.
    """

    content_frames: torch.Tensor
    context: torch.Tensor
    spk: torch.Tensor
    is_null: torch.Tensor
    prompt_mask: torch.Tensor | None = None
    frame_mask: torch.Tensor | None = None

    def __post_init__(self):
        B, Fr = self.content_frames.shape[:2]
        if self.context.shape[:2] != (B, Fr):
            raise InvalidArgumentError(
                f"content has {tuple(self.content_frames.shape[:2])} frames, context {tuple(self.context.shape[:2])}"
            )
        if self.spk.shape[0] != B or self.is_null.shape != (B,):
            raise InvalidArgumentError("speaker / null flags do not match the batch size")

    @property
    def n_frames(self) -> int:
        return self.content_frames.shape[1]

    def take(self, idx) -> "DenoiserConditioning":
        opt = lambda v: None if v is None else v[idx]
        return DenoiserConditioning(self.content_frames[idx], self.context[idx], self.spk[idx],
                                    self.is_null[idx], opt(self.prompt_mask), opt(self.frame_mask))

    def with_null(self, flags) -> "DenoiserConditioning":
        flags = torch.as_tensor(flags, dtype=torch.bool, device=self.is_null.device)
        return replace(self, is_null=self.is_null | flags)

    def as_null(self) -> "DenoiserConditioning":
        return replace(self, is_null=torch.ones_like(self.is_null))


def cfg_dropout(cond: DenoiserConditioning, p_drop: float, rng: np.random.Generator) -> DenoiserConditioning:
    """Drop content, context and speaker jointly with probability ``p_drop`` per item."""
    if not 0.0 <= p_drop <= 1.0:
        raise InvalidArgumentError(f"p_drop must lie in [0, 1], got {p_drop}")
    flags = rng.random(cond.is_null.shape[0]) < p_drop
    return cond.with_null(flags)


def sinusoidal(x: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=x.dtype, device=x.device) / half)
    args = x[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class TimeStepEmbedder(nn.Module):
    """Embeds flow time ``t`` and step size ``d`` into one conditioning vector.

    With ``tie_base`` the smallest grid step ``1/n_base`` shares the ``d = 0``
    embedding: a base-unit step is an Euler step of the flow-matching field,
    which anchors the chain of self-consistency targets.
    """

    def __init__(self, dim: int, freq_dim: int = 64, n_base: int = 128, tie_base: bool = True):
        super().__init__()
        self.freq_dim = freq_dim
        self.tie_base = tie_base
        self.grid = TimeGrid(n_base)
        self.t_mlp = nn.Sequential(nn.Linear(freq_dim, dim), nn.SiLU(), nn.Linear(dim, dim))
        self.d_mlp = nn.Sequential(nn.Linear(freq_dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t, d):
        t = torch.as_tensor(t, dtype=self.t_mlp[0].weight.dtype, device=self.t_mlp[0].weight.device).reshape(-1)
        d_arr = torch.as_tensor(d).detach().cpu().double().numpy().reshape(-1)
        idx = self.grid.step_index(d_arr)
        if self.tie_base:
            idx = np.where(idx == 1, 0, idx)
        idx = torch.as_tensor(idx, dtype=t.dtype, device=t.device)
        if idx.numel() == 1 and t.numel() > 1:
            idx = idx.expand_as(t)
        return self.t_mlp(sinusoidal(t * 1000.0, self.freq_dim)) + self.d_mlp(sinusoidal(idx, self.freq_dim))


def modulate(x, shift, scale):
    return x * (1 + scale[:, None, :]) + shift[:, None, :]


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, key_mask=None):
        B, N, D = x.shape
        q, k, v = self.qkv(x).view(B, N, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        mask = None if key_mask is None else key_mask[:, None, None, :]
        y = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        return self.proj(y.transpose(1, 2).reshape(B, N, D))


class AdaLNZeroBlock(nn.Module):
    """Parallel attention/MLP block with AdaLN-zero modulation.

    All six modulation vectors are regressed from the conditioning vector by
    a zero-initialised linear layer, so the block is the identity at init.
    """

    def __init__(self, dim: int, heads: int, cond_dim: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.dim = dim
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(approximate="tanh"), nn.Linear(hidden, dim))
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(cond_dim, 6 * dim))
        nn.init.zeros_(self.modulation[1].weight)
        nn.init.zeros_(self.modulation[1].bias)

    def forward(self, h, c, key_mask=None):
        if h.shape[-1] != self.dim or c.shape[-1] != self.modulation[1].in_features:
            raise InvalidArgumentError(f"block expects width {self.dim}, got h {tuple(h.shape)}, c {tuple(c.shape)}")
        shift1, scale1, gate1, shift2, scale2, gate2 = self.modulation(c).chunk(6, dim=-1)
        a = self.attn(modulate(self.norm1(h), shift1, scale1), key_mask)
        m = self.mlp(modulate(self.norm2(h), shift2, scale2))
        return h + gate1[:, None, :] * a + gate2[:, None, :] * m


class ConformerBlock(nn.Module):
    """Self-attention, depthwise convolution and feed-forward, each pre-normed and residual."""

    def __init__(self, dim: int, heads: int, kernel: int):
        super().__init__()
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm_conv = nn.LayerNorm(dim)
        self.conv = nn.Conv1d(dim, dim, kernel, padding=kernel // 2, groups=dim)
        self.pointwise = nn.Linear(dim, dim)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, 2 * dim), nn.SiLU(), nn.Linear(2 * dim, dim))

    def forward(self, x, pad_mask=None):
        x = x + self.attn(self.norm_attn(x), pad_mask)
        y = self.norm_conv(x)
        if pad_mask is not None:
            y = y * pad_mask[..., None]
        y = self.pointwise(F.silu(self.conv(y.transpose(1, 2)).transpose(1, 2)))
        x = x + y
        return x + self.ff(self.norm_ff(x))


class ContentEncoder(nn.Module):
    def __init__(self, n_units: int, dim: int, layers: int, heads: int, kernel: int):
        super().__init__()
        self.dim = dim
        self.emb = nn.Embedding(n_units, dim)
        self.blocks = nn.ModuleList(ConformerBlock(dim, heads, kernel) for _ in range(layers))
        self.norm = nn.LayerNorm(dim)

    def forward(self, units, pad_mask=None):
        N = units.shape[1]
        pos = sinusoidal(torch.arange(N, dtype=self.emb.weight.dtype, device=units.device), self.dim)
        x = self.emb(units) + pos[None]
        for blk in self.blocks:
            x = blk(x, pad_mask)
        return self.norm(x)


class Denoiser(nn.Module):
    """Content encoder plus DiT stack; ``forward(x_t, t, d, cond)`` returns a shortcut velocity."""

    def __init__(self, cfg: DiTConfig):
        super().__init__()
        self.cfg = cfg
        D = cfg.model_dim
        self.encoder = ContentEncoder(cfg.n_units, cfg.content_dim, cfg.encoder_layers, cfg.encoder_heads, cfg.encoder_kernel)
        self.spk_proj = nn.Linear(cfg.spk_dim, cfg.spk_proj_dim)
        self.null_content = nn.Parameter(torch.zeros(cfg.content_dim))
        self.null_context = nn.Parameter(torch.zeros(cfg.channels))
        self.null_spk = nn.Parameter(torch.zeros(cfg.spk_proj_dim))
        nn.init.normal_(self.null_content, std=0.02)
        nn.init.normal_(self.null_spk, std=0.02)
        in_dim = 2 * cfg.channels + cfg.content_dim + cfg.spk_proj_dim
        self.in_proj = nn.Linear(in_dim, D)
        self.pos_conv = nn.Conv1d(D, D, cfg.pos_kernel, padding=cfg.pos_kernel // 2, groups=D)
        self.time_embed = TimeStepEmbedder(D, cfg.freq_dim, cfg.n_base, cfg.tie_base_step)
        self.blocks = nn.ModuleList(AdaLNZeroBlock(D, cfg.heads, D, cfg.mlp_ratio) for _ in range(cfg.layers))
        self.final_norm = nn.LayerNorm(D, elementwise_affine=False, eps=1e-6)
        self.final_mod = nn.Sequential(nn.SiLU(), nn.Linear(D, 2 * D))
        nn.init.zeros_(self.final_mod[1].weight)
        nn.init.zeros_(self.final_mod[1].bias)
        self.out_proj = nn.Linear(D, cfg.channels)

    def encode_content(self, units_list, durations_list):
        """Encode unit sequences and length-regulate them to frames.

        Returns ``(content_frames, frame_mask)`` padded to the longest item.
        """
        dev = self.null_content.device
        n_max = max(len(u) for u in units_list)
        units = torch.zeros(len(units_list), n_max, dtype=torch.long, device=dev)
        pad = torch.zeros(len(units_list), n_max, dtype=torch.bool, device=dev)
        for i, u in enumerate(units_list):
            units[i, : len(u)] = torch.as_tensor(np.asarray(u), device=dev)
            pad[i, : len(u)] = True
        enc = self.encoder(units, pad)
        frames = [length_regulate(enc[i, : len(u)], np.asarray(d)) for i, (u, d) in enumerate(zip(units_list, durations_list))]
        f_max = max(f.shape[0] for f in frames)
        out = enc.new_zeros(len(frames), f_max, enc.shape[-1])
        mask = torch.zeros(len(frames), f_max, dtype=torch.bool, device=dev)
        for i, f in enumerate(frames):
            out[i, : f.shape[0]] = f
            mask[i, : f.shape[0]] = True
        return out, mask

    def condition_vector(self, t, d):
        return self.time_embed(t, d)

    def stem(self, x_t, cond: DenoiserConditioning):
        if x_t.shape[:2] != cond.content_frames.shape[:2]:
            raise InvalidArgumentError(
                f"x_t has {tuple(x_t.shape[:2])} (batch, frames); conditioning has {tuple(cond.content_frames.shape[:2])}"
            )
        if x_t.shape[-1] != self.cfg.channels:
            raise InvalidArgumentError(f"expected {self.cfg.channels} channels, got {x_t.shape[-1]}")
        B, Fr, _ = x_t.shape
        null = cond.is_null[:, None, None]
        content = torch.where(null, self.null_content.expand(B, Fr, -1), cond.content_frames)
        context = torch.where(null, self.null_context.expand(B, Fr, -1), cond.context)
        spk = torch.where(cond.is_null[:, None], self.null_spk.expand(B, -1), self.spk_proj(cond.spk))
        h = self.in_proj(torch.cat([x_t, content, context, spk[:, None, :].expand(B, Fr, -1)], dim=-1))
        hc = h if cond.frame_mask is None else h * cond.frame_mask[..., None]
        return h + F.gelu(self.pos_conv(hc.transpose(1, 2)).transpose(1, 2))

    def forward(self, x_t, t, d, cond: DenoiserConditioning):
        c = self.condition_vector(t, d)
        if c.shape[0] == 1 and x_t.shape[0] > 1:
            c = c.expand(x_t.shape[0], -1)
        h = self.stem(x_t, cond)
        for blk in self.blocks:
            h = blk(h, c, cond.frame_mask)
        shift, scale = self.final_mod(c).chunk(2, dim=-1)
        return self.out_proj(modulate(self.final_norm(h), shift, scale))


def dit_forward(model: Denoiser, x_t, t, d, cond: DenoiserConditioning):
    return model(x_t, t, d, cond)
