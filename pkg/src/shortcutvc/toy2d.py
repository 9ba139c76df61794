"""Two-dimensional few-step benchmark: shortcut field vs. vanilla flow matching.

A small step-conditioned MLP is trained on an 8-Gaussians (or two-moons)
target. Sample quality is the sliced Wasserstein-1 distance to fresh data.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .denoiser import TimeStepEmbedder
from .errors import InvalidArgumentError
from .sampler import SamplerConfig, euler_cfm_sample, shortcut_sample
from .shortcut import SCFMConfig, TimeGrid, cfm_loss, make_cfm_batch, make_shortcut_batch, scfm_loss


@dataclass
class Toy2DConfig:
    dataset: str = "8gaussians"
    hidden: int = 256
    layers: int = 3
    steps: int = 6000
    batch_size: int = 512
    lr: float = 1e-3
    warmup_steps: int = 200
    k: float = 0.7
    n_base: int = 128
    seed: int = 0
    n_eval: int = 10_000
    n_proj: int = 512
    shortcut_nfe: tuple = (1, 2, 4, 128)
    vanilla_nfe: tuple = (2, 128)

    def __post_init__(self):
        self.shortcut_nfe = tuple(self.shortcut_nfe)
        self.vanilla_nfe = tuple(self.vanilla_nfe)
        if self.dataset not in DATASETS:
            raise InvalidArgumentError(f"unknown dataset {self.dataset!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shortcut_nfe"], d["vanilla_nfe"] = list(self.shortcut_nfe), list(self.vanilla_nfe)
        return d


def eight_gaussians(n: int, rng: np.random.Generator, radius: float = 2.0, std: float = 0.1) -> np.ndarray:
    angles = rng.integers(0, 8, size=n) * (np.pi / 4)
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return centers + std * rng.standard_normal((n, 2))


def two_moons(n: int, rng: np.random.Generator, noise: float = 0.05) -> np.ndarray:
    upper = rng.random(n) < 0.5
    theta = rng.random(n) * np.pi
    x = np.where(upper, np.cos(theta), 1 - np.cos(theta))
    y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
    pts = np.stack([x - 0.5, y - 0.25], axis=1) * 2.0
    return pts + noise * rng.standard_normal((n, 2))


DATASETS = {"8gaussians": eight_gaussians, "moons": two_moons}


def sliced_wasserstein(a, b, n_proj: int = 512, rng: np.random.Generator | None = None) -> float:
    """Mean over random directions of the 1-D Wasserstein-1 distance between projections."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError("sliced Wasserstein here needs equal-size samples")
    rng = rng or np.random.default_rng(0)
    dirs = rng.standard_normal((a.shape[1], n_proj))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    pa, pb = np.sort(a @ dirs, axis=0), np.sort(b @ dirs, axis=0)
    return float(np.abs(pa - pb).mean())


class ToyField(nn.Module):
    """MLP shortcut field ``s(x, t, d)`` on R^2."""

    def __init__(self, hidden: int = 256, layers: int = 3, n_base: int = 128):
        super().__init__()
        self.inp = nn.Linear(2, hidden)
        self.embed = TimeStepEmbedder(hidden, 64, n_base)
        body = []
        for _ in range(layers):
            body += [nn.SiLU(), nn.Linear(hidden, hidden)]
        self.body = nn.Sequential(*body, nn.SiLU(), nn.Linear(hidden, 2))

    def forward(self, x, t, d, cond=None):
        return self.body(self.inp(x) + self.embed(t, d))


def train_toy(cfg: Toy2DConfig, objective: str = "scfm", log: list | None = None) -> ToyField:
    torch.manual_seed(cfg.seed)
    model = ToyField(cfg.hidden, cfg.layers, cfg.n_base)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, foreach=False)
    rng = np.random.default_rng([cfg.seed, 21])
    grid = TimeGrid(cfg.n_base)
    scfm = SCFMConfig(cfg.k)
    data = DATASETS[cfg.dataset]
    for step in range(1, cfg.steps + 1):
        for g in opt.param_groups:
            g["lr"] = cfg.lr * min(1.0, step / max(cfg.warmup_steps, 1))
        x1 = torch.as_tensor(data(cfg.batch_size, rng), dtype=torch.float32)
        if objective == "cfm":
            loss = cfm_loss(model, make_cfm_batch(x1, rng, grid))
            lfm, lsc = loss, torch.zeros(())
        else:
            loss, lfm, lsc = scfm_loss(model, make_shortcut_batch(x1, rng, scfm, grid), None, scfm)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if log is not None and step % 50 == 0:
            log.append({"objective": objective, "step": step, "loss_fm": lfm.item(), "loss_sc": lsc.item()})
    return model.eval()


def evaluate_toy(model, cfg: Toy2DConfig, mode: str, nfe: int, eval_seed: int = 1) -> tuple[float, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 22, eval_seed, nfe])
    target = DATASETS[cfg.dataset](cfg.n_eval, np.random.default_rng([cfg.seed, 23]))
    shape = (cfg.n_eval, 2)
    if mode == "shortcut":
        x = shortcut_sample(model, None, SamplerConfig(nfe=nfe, alpha=0.0, n_base=cfg.n_base), rng, shape=shape)
    else:
        x = euler_cfm_sample(model, None, nfe, 0.0, rng, shape=shape)
    x = x.numpy()
    return sliced_wasserstein(x, target, cfg.n_proj, np.random.default_rng([cfg.seed, 24])), x


def toy2d_bench(cfg: Toy2DConfig | None = None, log: list | None = None, keep_samples: bool = False) -> dict:
    """Train both fields and report sliced-Wasserstein distances per sampler / NFE."""
    cfg = cfg or Toy2DConfig()
    t0 = time.perf_counter()
    shortcut = train_toy(cfg, "scfm", log)
    vanilla = train_toy(cfg, "cfm", log)
    train_s = time.perf_counter() - t0
    out: dict = {"config": cfg.to_dict(), "shortcut": {}, "vanilla": {}}
    samples: dict = {}
    for nfe in cfg.shortcut_nfe:
        out["shortcut"][str(nfe)], samples[f"shortcut_{nfe}"] = evaluate_toy(shortcut, cfg, "shortcut", nfe)
    for nfe in cfg.vanilla_nfe:
        out["vanilla"][str(nfe)], samples[f"vanilla_{nfe}"] = evaluate_toy(vanilla, cfg, "euler", nfe)
    ref = out["vanilla"].get(str(max(cfg.vanilla_nfe)))
    if ref:
        out["shortcut_2_over_vanilla_ref"] = out["shortcut"].get("2", float("nan")) / ref
        out["vanilla_2_over_vanilla_ref"] = out["vanilla"].get("2", float("nan")) / ref
    out["noise_floor"] = sliced_wasserstein(
        DATASETS[cfg.dataset](cfg.n_eval, np.random.default_rng([cfg.seed, 25])),
        DATASETS[cfg.dataset](cfg.n_eval, np.random.default_rng([cfg.seed, 23])), cfg.n_proj,
        np.random.default_rng([cfg.seed, 24]))
    out["_train_seconds"] = train_s
    if keep_samples:
        out["_samples"] = samples
    return out
