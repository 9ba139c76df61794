"""Command-line entry point.

Every subcommand writes into ``--out``. Metrics files hold only
seed-determined values; wall-clock numbers go to separate ``timing`` files.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import arrays, checkpoint, config as cfgmod, plotting
from .errors import ConfigurationError, FormatError, InvalidArgumentError
from .evaluate import Prompt, build_vc_pairs, convert, evaluate_vc, identity_pairs
from .perturb import AudioSignal, perturb, read_wav, sample_perturb_params, write_wav
from .synth import BAND_ORDER, generate_corpus, load_corpus, pps, save_corpus
from .toy2d import DATASETS, toy2d_bench
from .train import load_denoiser, load_duration_model, resume, to_checkpoint, train_decoder, train_duration, write_jsonl


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _out(args) -> Path:
    out = cfgmod.resolve_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _corpus(args):
    return load_corpus(cfgmod.resolve_path(args.corpus))


def _ckpt(path):
    p = cfgmod.resolve_path(path)
    if not p.exists():
        raise FormatError(f"checkpoint not found: {p}")
    return checkpoint.load(p)


# ------------------------------------------------------------------ commands


def cmd_gen_world(args, cfg):
    out = _out(args)
    corpus = generate_corpus(cfgmod.world_config(cfg, args.seed))
    save_corpus(corpus, out)
    sil = corpus.world.cfg.silence_id
    by_band = {b: [] for b in BAND_ORDER}
    for u in corpus.train + corpus.test:
        by_band[corpus.speakers[u.speaker_id].band].append(pps(u.content.durations, u.content.units, sil))
    summary = {
        "n_speakers": len(corpus.speakers), "n_train": len(corpus.train), "n_test": len(corpus.test),
        "pps": {b: {"mean": float(np.mean(v)), "min": float(np.min(v)), "max": float(np.max(v))}
                for b, v in by_band.items() if v},
    }
    _write_json(out / "world_summary.json", summary)
    if not args.no_plots:
        plotting.plot_pps_histogram(by_band, out / "pps_hist.png")
    return summary


def _demo_tones(n: int, seed: int, sr: int = 16000) -> list[tuple[str, AudioSignal]]:
    rng = np.random.default_rng([seed, 41])
    out = []
    for i in range(n):
        f0 = rng.uniform(100, 250)
        t = np.arange(int(sr * 0.6)) / sr
        vib = f0 * (1 + 0.03 * np.sin(2 * np.pi * 5 * t))
        phase = 2 * np.pi * np.cumsum(vib) / sr
        x = sum(0.3 / k * np.sin(k * phase) for k in range(1, 6))
        out.append((f"tone_{i:03d}.wav", AudioSignal(x, sr)))
    return out


def cmd_perturb(args, cfg):
    out = _out(args)
    if args.input:
        src = cfgmod.resolve_path(args.input)
        files = sorted(src.glob("*.wav"))
        if not files:
            raise InvalidArgumentError(f"no .wav files under {src}")
        items = [(f.name, read_wav(f)) for f in files]
    else:
        items = _demo_tones(args.demo, args.seed)
    seeds = {}
    if args.seed_manifest:
        seeds = json.loads(cfgmod.resolve_path(args.seed_manifest).read_text())
    rows = []
    for i, (name, sig) in enumerate(items):
        file_seed = int(seeds.get(name, args.seed * 100_003 + i))
        stages: list = []
        rng = np.random.default_rng(file_seed)
        params = sample_perturb_params(rng, sig.sample_rate)
        y = perturb(sig, rng, args.backend, stages, params)
        peak = float(np.max(np.abs(y.samples))) or 1.0
        if peak > 0.99:
            y = AudioSignal(y.samples * (0.99 / peak), y.sample_rate)
        write_wav(out / "audio" / name, y, float32=args.float32)
        rows.append({
            "file": name, "seed": file_seed, "stages": stages,
            "formant_ratio": params.formant_ratio, "pitch_shift_ratio": params.pitch_shift_ratio,
            "pitch_range_ratio": params.pitch_range_ratio,
            "peq": [{"kind": f.kind, "freq": f.freq, "gain_db": f.gain_db, "q": f.q} for f in params.peq],
            "in_samples": len(sig.samples), "out_samples": len(y.samples),
        })
    write_jsonl(out / "perturb.jsonl", rows)
    return {"n_files": len(rows)}


def _train(args, cfg, kind: str):
    out = _out(args)
    corpus = _corpus(args)
    wc = corpus.world.cfg
    if kind == "duration":
        model_cfg, train_cfg = cfgmod.duration_configs(cfg, wc.vocab, args.seed)
        trainer, keys = train_duration, ["loss"]
    else:
        model_cfg, train_cfg = cfgmod.decoder_configs(cfg, wc.vocab, wc.channels, args.seed)
        trainer, keys = train_decoder, ["loss_fm", "loss_sc"]
    state = None
    if args.resume:
        ck = _ckpt(args.resume)
        if ck.kind != kind:
            raise ConfigurationError(f"cannot resume {kind} training from a {ck.kind!r} checkpoint")
        state = resume(ck)
    t0 = time.perf_counter()
    state = trainer(corpus, model_cfg, train_cfg, state=state)
    wall = time.perf_counter() - t0
    checkpoint.save(out / f"{kind}.ckpt", to_checkpoint(kind, state, model_cfg, train_cfg))
    write_jsonl(out / "metrics.jsonl", state.metrics)
    write_jsonl(out / "timing.jsonl", state.timing + [{"total_seconds": wall}])
    if not args.no_plots and state.metrics:
        plotting.plot_loss_curves(state.metrics, keys, out / "loss.png", f"{kind} training")
    last = state.metrics[-1] if state.metrics else {}
    return {"step": state.step, **{k: last.get(k) for k in keys}}


def cmd_train_duration(args, cfg):
    return _train(args, cfg, "duration")


def cmd_train_decoder(args, cfg):
    return _train(args, cfg, "decoder")


def _utt(corpus, uid):
    if uid not in corpus.by_id:
        raise InvalidArgumentError(f"unknown utterance id {uid!r}")
    return corpus.by_id[uid]


def _timing(out, name, wall, frames):
    _write_json(out / name, {"wall_seconds": wall, "frames": int(frames),
                             "seconds_per_frame": wall / max(int(frames), 1)})


def cmd_convert(args, cfg):
    out = _out(args)
    corpus = _corpus(args)
    src, tgt = _utt(corpus, args.source), _utt(corpus, args.target)
    spk = corpus.speakers[tgt.speaker_id]
    den = load_denoiser(_ckpt(args.decoder_ckpt))
    ev = cfg.get("eval", {})
    scfg = cfgmod.sampler_config(cfg, args.nfe, args.alpha, args.mode)
    prompt = Prompt.from_utterance(tgt, ev.get("prompt_units", 24))
    durations = None
    dm = None
    if args.bypass_durations:
        durations = corpus.world.law_durations(src.content.units, spk)
    else:
        if not args.duration_ckpt:
            raise ConfigurationError("--duration-ckpt is required unless --bypass-durations is set")
        dm = load_duration_model(_ckpt(args.duration_ckpt))
    rng = np.random.default_rng([args.seed, 51])
    t0 = time.perf_counter()
    res = convert(dm, den, src.content.units, spk.spk_vector, prompt, scfg, rng, durations,
                  T=ev.get("decode_iters", 10))
    wall = time.perf_counter() - t0
    ref = corpus.world.oracle_render(src.content.units, res.durations, spk)
    arrays.save(out / "converted.safetensors", {"features": res.features, "durations": res.durations},
                {"source": src.id, "target": tgt.id, "prompt_frames": res.prompt_frames})
    sil = corpus.world.cfg.silence_id
    metrics = {
        "source": src.id, "target": tgt.id, "target_speaker": spk.id, "nfe": scfg.nfe, "mode": scfg.mode.value,
        "alpha": scfg.alpha, "frames": int(len(res.features)), "prompt_frames": res.prompt_frames,
        "generated_pps": pps(res.durations, src.content.units, sil),
        "oracle_mae": float(np.abs(res.generated.astype(np.float64) - ref).mean()),
    }
    _write_json(out / "convert.json", metrics)
    _timing(out, "timing.json", wall, len(res.generated))
    if not args.no_plots:
        plotting.plot_features(res.features, out / "converted.png", res.prompt_frames)
    return metrics


def cmd_sample(args, cfg):
    """Regenerate an utterance from its content and true durations, prompted by another utterance."""
    out = _out(args)
    corpus = _corpus(args)
    utt = _utt(corpus, args.utterance)
    prompt_utt = _utt(corpus, args.prompt) if args.prompt else utt
    if prompt_utt.speaker_id != utt.speaker_id:
        raise InvalidArgumentError("the prompt must come from the same speaker")
    spk = corpus.speakers[utt.speaker_id]
    den = load_denoiser(_ckpt(args.decoder_ckpt))
    scfg = cfgmod.sampler_config(cfg, args.nfe, args.alpha, args.mode)
    prompt = Prompt.from_utterance(prompt_utt, cfg.get("eval", {}).get("prompt_units", 24))
    rng = np.random.default_rng([args.seed, 52])
    t0 = time.perf_counter()
    res = convert(None, den, utt.content.units, spk.spk_vector, prompt, scfg, rng, utt.content.durations)
    wall = time.perf_counter() - t0
    arrays.save(out / "sample.safetensors", {"features": res.features},
                {"utterance": utt.id, "prompt": prompt_utt.id, "prompt_frames": res.prompt_frames})
    metrics = {"utterance": utt.id, "prompt": prompt_utt.id, "nfe": scfg.nfe, "mode": scfg.mode.value,
               "alpha": scfg.alpha, "frames": int(len(res.features)),
               "oracle_mae": float(np.abs(res.generated.astype(np.float64) - utt.features).mean())}
    _write_json(out / "sample.json", metrics)
    _timing(out, "timing.json", wall, len(res.generated))
    return metrics


def cmd_eval_vc(args, cfg):
    out = _out(args)
    corpus = _corpus(args)
    ev = {**cfgmod.DESK_DEFAULTS["eval"], **cfg.get("eval", {})}
    n_pairs = args.pairs or ev["n_pairs"]
    dm = load_duration_model(_ckpt(args.duration_ckpt)) if args.duration_ckpt else None
    den = load_denoiser(_ckpt(args.decoder_ckpt)) if args.decoder_ckpt else None
    scfg = cfgmod.sampler_config(cfg, args.nfe, args.alpha, args.mode)
    pairs = build_vc_pairs(corpus, n_pairs, args.seed)
    kw = dict(seed=args.seed, T=ev["decode_iters"], prompt_units=ev["prompt_units"], batch_size=ev["batch_size"])
    t0 = time.perf_counter()
    res = evaluate_vc(dm, den, corpus, pairs, scfg, durations=args.durations, **kw)
    records = res.pop("pairs")
    report = {"main": res}
    if den is not None and args.nfe_sweep:
        sweep = {}
        for nfe in args.nfe_sweep:
            s = cfgmod.sampler_config(cfg, nfe, args.alpha, args.mode)
            r = res if nfe == scfg.nfe else evaluate_vc(dm, den, corpus, pairs, s, durations=args.durations, **kw)
            sweep[str(nfe)] = r["oracle_mae"]
        report["nfe_sweep"] = sweep
    if den is not None and args.identity:
        idp = identity_pairs(corpus, args.identity, args.seed)
        r = evaluate_vc(None, den, corpus, idp, scfg, durations="source", **kw)
        report["identity"] = {"n_pairs": r["n_pairs"], "oracle_mae": r["oracle_mae"]}
    wall = time.perf_counter() - t0
    _write_json(out / "eval.json", report)
    write_jsonl(out / "pairs.jsonl", records)
    _write_json(out / "timing.json", {"wall_seconds": wall})
    if not args.no_plots:
        plotting.plot_pps(records, out / "pps.png")
        if "nfe_sweep" in report:
            plotting.plot_nfe_curve({"shortcut": report["nfe_sweep"]}, out / "nfe.png", "oracle MAE")
    return {k: res[k] for k in ("n_pairs", "rhythm_accuracy", "acc_1") if k in res} | (
        {"oracle_mae": res["oracle_mae"]} if "oracle_mae" in res else {})


def cmd_toy2d(args, cfg):
    out = _out(args)
    tcfg = cfgmod.toy2d_config(cfg, args.seed)
    log: list = []
    res = toy2d_bench(tcfg, log, keep_samples=not args.no_plots)
    samples = res.pop("_samples", None)
    train_s = res.pop("_train_seconds")
    _write_json(out / "toy2d.json", res)
    write_jsonl(out / "metrics.jsonl", log)
    _write_json(out / "timing.json", {"train_seconds": train_s})
    if samples is not None:
        plotting.plot_nfe_curve({"shortcut": res["shortcut"], "vanilla CFM": res["vanilla"]}, out / "toy2d_nfe.png",
                                reference=res["noise_floor"])
        target = DATASETS[tcfg.dataset](2000, np.random.default_rng([tcfg.seed, 23]))
        plotting.plot_toy_samples(samples, target, out / "toy2d_samples.png")
    return {k: v for k, v in res.items() if k != "config"}


# ------------------------------------------------------------------ parser


def _nfe_list(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",") if v]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad NFE list {s!r}") from e


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shortcutvc", description="Few-step voice conversion on a synthetic world.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML config file")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. decoder_train.total_steps=500")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--no-plots", action="store_true")
        sp.set_defaults(func=fn)
        return sp

    def add_sampler(sp):
        sp.add_argument("--nfe", type=int)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--mode", choices=["shortcut", "euler"])

    add("gen-world", cmd_gen_world, "generate and save the synthetic corpus")

    sp = add("perturb", cmd_perturb, "perturb a directory of WAV files")
    sp.add_argument("--input", help="directory of mono WAV files (default: synthetic demo tones)")
    sp.add_argument("--demo", type=int, default=4, help="number of demo tones when --input is absent")
    sp.add_argument("--seed-manifest", help="JSON mapping file name -> seed")
    sp.add_argument("--backend", default="naive")
    sp.add_argument("--float32", action="store_true")

    for name, fn in (("train-duration", cmd_train_duration), ("train-decoder", cmd_train_decoder)):
        sp = add(name, fn, f"train the {name.split('-')[1]} model")
        sp.add_argument("--corpus", required=True)
        sp.add_argument("--resume", help="checkpoint to continue from")

    sp = add("convert", cmd_convert, "convert one source utterance to a target speaker")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--duration-ckpt")
    sp.add_argument("--decoder-ckpt", required=True)
    sp.add_argument("--source", required=True)
    sp.add_argument("--target", required=True, help="utterance id providing the target speaker and prompt")
    sp.add_argument("--bypass-durations", action="store_true", help="use the target speaker's noise-free law")
    add_sampler(sp)

    sp = add("sample", cmd_sample, "regenerate an utterance with the decoder")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--decoder-ckpt", required=True)
    sp.add_argument("--utterance", required=True)
    sp.add_argument("--prompt", help="same-speaker utterance used as prompt (default: the utterance itself)")
    add_sampler(sp)

    sp = add("eval-vc", cmd_eval_vc, "evaluate conversion on synthetic non-parallel pairs")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--duration-ckpt")
    sp.add_argument("--decoder-ckpt")
    sp.add_argument("--pairs", type=int)
    sp.add_argument("--durations", choices=["model", "source", "oracle"], default="model")
    sp.add_argument("--nfe-sweep", type=_nfe_list)
    sp.add_argument("--identity", type=int, default=0, help="also score N identity conversions")
    add_sampler(sp)

    add("toy2d", cmd_toy2d, "2-D few-step benchmark")
    return p


_EXIT = {InvalidArgumentError: 2, ConfigurationError: 3, FormatError: 4}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(1)
    try:
        cfg = cfgmod.load_config(cfgmod.resolve_path(args.config) if args.config else None, args.overrides)
        result = args.func(args, cfg)
    except (InvalidArgumentError, ConfigurationError, FormatError, OSError) as e:
        code = next((c for t, c in _EXIT.items() if isinstance(e, t)), 5)
        print(json.dumps({"ok": False, "error": type(e).__name__, "message": str(e), "command": args.command}),
              file=sys.stderr)
        return code
    print(json.dumps({"ok": True, "command": args.command, "result": result}, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
