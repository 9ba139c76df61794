import numpy as np
import pytest
import torch

from shortcutvc import checkpoint
from shortcutvc.denoiser import DiTConfig
from shortcutvc.duration import DurationModelConfig
from shortcutvc.errors import ConfigurationError, FormatError, InvalidArgumentError
from shortcutvc.synth import WorldConfig, generate_corpus
from shortcutvc.train import (
    DecoderTrainConfig,
    DurationTrainConfig,
    TrainConfig,
    decoder_batch,
    duration_batch,
    new_decoder_state,
    resume,
    to_checkpoint,
    train_decoder,
    train_duration,
    warmup_lr,
)

DUR = dict(layers=2, heads=2, hidden_dim=16)
DIT = dict(layers=2, heads=2, model_dim=16, content_dim=16, encoder_layers=1, encoder_heads=2, spk_proj_dim=8,
           freq_dim=16, mlp_ratio=2)


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(WorldConfig(n_speakers=6, n_train=24, n_test=6, min_units=8, max_units=12))


def dur_cfgs(corpus, **kw):
    mc = DurationModelConfig(n_units=corpus.world.cfg.vocab, **DUR)
    return mc, DurationTrainConfig(**{"lr": 1e-3, "warmup_steps": 2, "total_steps": 4, "batch_size": 4, **kw})


def dec_cfgs(corpus, **kw):
    mc = DiTConfig(n_units=corpus.world.cfg.vocab, channels=corpus.world.cfg.channels, **DIT)
    tc = DecoderTrainConfig(**{"lr": 1e-3, "warmup_steps": 2, "total_steps": 4, "batch_size": 4,
                               "segment_frames": 32, **kw})
    return mc, tc


def test_warmup_is_exact():
    for s in range(1, 11):
        assert warmup_lr(s, 5e-5, 10) == 5e-5 * s / 10
    assert warmup_lr(11, 5e-5, 10) == 5e-5
    assert warmup_lr(500, 5e-5, 10) == 5e-5


def test_train_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(warmup_steps=10, total_steps=5)
    with pytest.raises(InvalidArgumentError):
        DecoderTrainConfig(objective="adam")
    assert (TrainConfig().lr, TrainConfig().beta1, TrainConfig().beta2) == (5e-5, 0.9, 0.999)


def test_duration_batch_masks_only_target(corpus):
    rng = np.random.default_rng(0)
    units, durs, mask, spk, pad = duration_batch(corpus, [0, 1, 2, 3], rng, 64, prompt_prob=1.0, prompt_units=3)
    assert mask.any(1).all()
    # the first three positions are the prompt and never masked
    assert not mask[:, :3].any()
    assert torch.all(mask <= pad)


def test_zero_lr_leaves_weights_unchanged(corpus):
    mc, tc = dur_cfgs(corpus, lr=0.0, total_steps=2)
    torch.manual_seed(tc.seed)
    from shortcutvc.duration import DurationModel
    ref = DurationModel(mc).state_dict()
    st = train_duration(corpus, mc, tc)
    for k, v in st.model.state_dict().items():
        assert torch.equal(v, ref[k]), k


def test_duration_training_is_deterministic(corpus):
    mc, tc = dur_cfgs(corpus)
    a = train_duration(corpus, mc, tc)
    b = train_duration(corpus, mc, tc)
    assert a.metrics == b.metrics
    assert [m["lr"] for m in a.metrics] == [5e-4, 1e-3, 1e-3, 1e-3]


def test_duration_config_mismatch(corpus):
    mc = DurationModelConfig(n_units=5, **DUR)
    with pytest.raises(ConfigurationError):
        train_duration(corpus, mc, DurationTrainConfig(total_steps=1, warmup_steps=1))


def test_decoder_batch_layout(corpus):
    mc, tc = dec_cfgs(corpus, p_drop=0.0)
    st = new_decoder_state(mc, tc)
    x1, cond, loss_mask = decoder_batch(st.model, corpus, [0, 1, 2], np.random.default_rng(0), tc)
    assert x1.shape[1] <= 32 and x1.shape == cond.context.shape
    prompt = cond.prompt_mask
    # context equals x1 on prompt frames and is zero elsewhere
    assert torch.equal(cond.context[prompt], x1[prompt])
    assert torch.all(cond.context[~prompt] == 0)
    assert not torch.any(loss_mask & prompt)
    frac = loss_mask.sum(1).float() / cond.frame_mask.sum(1).float()
    assert torch.all(frac >= 0.69) and torch.all(frac <= 1.0)


def test_decoder_k1_bit_identical_to_vanilla(corpus):
    mc, tc_s = dec_cfgs(corpus, k=1.0, objective="scfm")
    _, tc_v = dec_cfgs(corpus, k=1.0, objective="cfm")
    a = train_decoder(corpus, mc, tc_s)
    b = train_decoder(corpus, mc, tc_v)
    assert [m["loss_fm"] for m in a.metrics] == [m["loss_fm"] for m in b.metrics]
    for k, v in a.model.state_dict().items():
        assert torch.equal(v, b.model.state_dict()[k]), k


def test_decoder_reports_both_losses(corpus):
    mc, tc = dec_cfgs(corpus)
    st = train_decoder(corpus, mc, tc)
    assert all(m["loss_sc"] > 0 and m["loss_fm"] > 0 for m in st.metrics)
    assert set(st.metrics[0]) == {"step", "loss_fm", "loss_sc", "lr"}
    assert set(st.timing[0]) == {"step", "wall_ms"}


@pytest.mark.parametrize("kind", ["duration", "decoder"])
def test_checkpoint_bytes_stable_and_resume_matches(corpus, kind, tmp_path):
    if kind == "duration":
        mc, tc = dur_cfgs(corpus, total_steps=6)
        trainer = train_duration
    else:
        mc, tc = dec_cfgs(corpus, total_steps=6)
        trainer = train_decoder
    full = trainer(corpus, mc, tc)
    half = trainer(corpus, mc, tc, steps=3)
    data = checkpoint.to_bytes(to_checkpoint(kind, half, mc, tc))
    assert checkpoint.to_bytes(checkpoint.from_bytes(data)) == data
    checkpoint.save(tmp_path / "c.ckpt", checkpoint.from_bytes(data))
    assert (tmp_path / "c.ckpt").read_bytes() == data
    resumed = resume(checkpoint.load(tmp_path / "c.ckpt"))
    assert resumed.step == 3
    resumed = trainer(corpus, mc, tc, state=resumed)
    assert resumed.metrics == full.metrics[3:]
    for k, v in resumed.model.state_dict().items():
        assert torch.equal(v, full.model.state_dict()[k])


def test_checkpoint_format_errors(tmp_path):
    with pytest.raises(FormatError):
        checkpoint.from_bytes(b"not a container")
    with pytest.raises(FormatError):
        checkpoint.load(tmp_path / "nope.ckpt")
    from shortcutvc import arrays
    with pytest.raises(FormatError):
        checkpoint.from_bytes(arrays.dumps({"model.w": np.zeros(2)}, {"kind": "duration"}))
