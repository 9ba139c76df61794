"""Static figures for the CLI report paths. Always uses the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .synth import FAST_ABOVE, SLOW_BELOW  # noqa: E402

_RC = {"figure.dpi": 100, "axes.grid": True, "grid.alpha": 0.3, "font.size": 9, "svg.hashsalt": "shortcutvc"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps the files reproducible
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def _smooth(y, w):
    y = np.asarray(y, dtype=float)
    if w <= 1 or len(y) < w:
        return y
    return np.convolve(y, np.ones(w) / w, mode="valid")


def plot_loss_curves(metrics: list[dict], keys, path, title: str = "") -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for k in keys:
            rows = [m for m in metrics if k in m]
            if not rows:
                continue
            y = [m[k] for m in rows]
            w = max(1, len(y) // 50)
            ax.plot(np.asarray([m["step"] for m in rows])[w - 1 :], _smooth(y, w), label=k, lw=1.2)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_nfe_curve(curves: dict, path, ylabel: str = "sliced W1", reference: float | None = None) -> Path:
    """``curves`` maps a label to ``{nfe: value}``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for label, pts in curves.items():
            xs = sorted(int(k) for k in pts)
            ax.plot(xs, [pts[str(x)] if str(x) in pts else pts[x] for x in xs], marker="o", label=label)
        if reference is not None:
            ax.axhline(reference, color="0.4", ls="--", lw=0.8)
        ax.set_xscale("log", base=2)
        ax.set_xlabel("NFE")
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_toy_samples(samples: dict, target, path) -> Path:
    names = list(samples)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(names) + 1, figsize=(2.2 * (len(names) + 1), 2.4), sharex=True, sharey=True)
        for ax, name, pts in zip(axes, ["data"] + names, [target] + [samples[n] for n in names]):
            pts = np.asarray(pts)[:2000]
            ax.scatter(pts[:, 0], pts[:, 1], s=1, alpha=0.4, rasterized=True)
            ax.set_title(name, fontsize=8)
            ax.set_aspect("equal")
        fig.tight_layout()
        return _save(fig, path)


def plot_pps(records: list[dict], path) -> Path:
    """Generated PPS per pair grouped by target rhythm class, with the class thresholds."""
    classes = ["slow", "normal", "fast"]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        data = [[r["generated_pps"] for r in records if r["target_class"] == c] for c in classes]
        ax.boxplot([d if d else [np.nan] for d in data])
        ax.set_xticks(range(1, len(classes) + 1), classes)
        for y in (SLOW_BELOW, FAST_ABOVE):
            ax.axhline(y, color="0.4", ls="--", lw=0.8)
        ax.set_xlabel("target rhythm")
        ax.set_ylabel("generated PPS")
        fig.tight_layout()
        return _save(fig, path)


def plot_pps_histogram(values_by_band: dict, path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for band, vals in values_by_band.items():
            ax.hist(vals, bins=30, alpha=0.6, label=band)
        for y in (SLOW_BELOW, FAST_ABOVE):
            ax.axvline(y, color="0.4", ls="--", lw=0.8)
        ax.set_xlabel("PPS")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_features(features, path, prompt_frames: int = 0) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 2.5))
        ax.imshow(np.asarray(features).T, aspect="auto", origin="lower", interpolation="nearest")
        if prompt_frames:
            ax.axvline(prompt_frames - 0.5, color="w", lw=1)
        ax.set_xlabel("frame")
        ax.set_ylabel("channel")
        ax.grid(False)
        fig.tight_layout()
        return _save(fig, path)
