import csv
import math

import numpy as np
import pytest

from graphtransformer import autodiff as ad
from graphtransformer import checkpoint
from graphtransformer.model import LossResult, make_example, unk_replace
from graphtransformer.training import (Adam, TrainConfig, TrainingDiverged, epoch_batches, evaluate_accuracy,
                                       load_model, lr_schedule, train)
from graphtransformer.toydata import svo_graph
from helpers import TINY, tiny_model, toy_examples

TINY_TRAIN = {**TINY, "batch_size": 4, "warmup": 20, "log_every": 1, "save_every": 0}


def test_lr_schedule():
    assert lr_schedule(400, 512, 400) == pytest.approx(0.002210, abs=5e-7)
    w = 250
    assert lr_schedule(w, 64, w) == pytest.approx(64 ** -0.5 * w ** -0.5, rel=1e-12)
    assert lr_schedule(2 * w, 64, w) < lr_schedule(w, 64, w)
    assert lr_schedule(10, 64, w) < lr_schedule(20, 64, w)
    with pytest.raises(ValueError):
        lr_schedule(0)


def test_config_text_roundtrip_and_validation():
    cfg = TrainConfig.from_text("# comment\nlayers = 2\ndropout=0.1  # inline\n\nseed = 7\n", {"batch_size": "3"})
    assert (cfg.layers, cfg.dropout, cfg.seed, cfg.batch_size) == (2, 0.1, 7, 3)
    assert TrainConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(KeyError):
        TrainConfig.from_text("no_such_key = 1")
    with pytest.raises(ValueError):
        TrainConfig.from_text("layers 2")
    for bad in ({"dropout": 1.0}, {"unk_rate": 1.5}, {"warmup": 0}, {"beta1": 1.0}, {"precision": "float16"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_unk_replace():
    rng = np.random.default_rng(0)
    ids = rng.integers(2, 50, size=(1000, 100))
    valid = np.ones_like(ids, dtype=bool)
    assert np.array_equal(unk_replace(ids, valid, 0.0, rng), ids)
    assert np.all(unk_replace(ids, valid, 1.0, rng) == 1)
    out = unk_replace(ids, valid, 0.33, np.random.default_rng(1))
    assert abs((out == 1).mean() - 0.33) < 0.01
    valid[:, 50:] = False
    out = unk_replace(ids, valid, 1.0, rng)
    assert np.array_equal(out[:, 50:], ids[:, 50:])
    with pytest.raises(ValueError):
        unk_replace(ids, valid, 1.2, rng)


def test_unk_replacement_keeps_characters():
    exs = toy_examples(3)
    model = tiny_model(exs)
    clean = model.make_batch(exs)
    noisy = model.make_batch(exs, mode="train", seed=3, unk_rate=1.0)
    assert np.all(noisy.enc.node_ids[noisy.enc.node_mask] == model.vocabs.node.id("<unk>"))
    assert noisy.enc.char_ids == clean.enc.char_ids


def test_uniform_model_loss_is_log_v(fp64):
    ex = make_example(svo_graph("see-01", "dog", "cat"), "a b c d e f")
    model = tiny_model([ex])
    assert len(model.vocabs.token) == 10
    model.decoder.generator.weight.data[:] = 0
    model.decoder.generator.bias.data[:] = 0
    model.eval()
    res = model.loss(model.make_batch([ex]), force_gate="gen")
    assert res.loss.item() == pytest.approx(math.log(10), abs=1e-12)


def test_generation_only_loss_is_cross_entropy(fp64):
    exs = toy_examples(4)
    model = tiny_model(exs)
    model.eval()
    batch = model.make_batch(exs)
    res = model.loss(batch, force_gate="gen")
    enc = model.encode(batch)
    h = model.decoder(enc.states, enc.node_mask, enc.x_global, batch.in_ids, batch.in_chars)
    ce = ad.cross_entropy(model.decoder.generator(h), batch.out_ids, batch.out_mask)
    assert res.loss.item() == pytest.approx(ce.item(), rel=1e-12)


def test_zero_probability_tokens_are_clamped_and_counted(fp64):
    exs = toy_examples(2)
    model = tiny_model(exs)
    model.eval()
    res = model.loss(model.make_batch(exs), force_gate="copy")
    # "the" and EOS can never be copied
    assert res.n_clamped > 0
    assert np.isfinite(res.loss.item()) and res.loss.item() <= -math.log(1e-12) + 1e-9


def test_adam():
    p = ad.Tensor(np.array([1.0, -2.0, 3.0]), dtype=np.float64)
    opt = Adam([("p", p)], eps=1e-9)
    p.grad = np.zeros(3)
    opt.step(0.1)
    assert np.array_equal(p.data, [1.0, -2.0, 3.0])
    opt = Adam([("p", p)], beta1=0.9, beta2=0.999, eps=1e-9)
    g = np.array([0.5, -1.0, 2.0])
    p.grad = g
    opt.step(0.01)
    # first bias-corrected step moves each coordinate by lr * sign(g) up to eps
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0, 3.0]) - 0.01 * np.sign(g), atol=1e-9)


def test_epoch_batches_partition():
    sizes = list(np.random.default_rng(0).integers(2, 10, size=23))
    batches = epoch_batches(23, sizes, 4, seed=1, epoch=0)
    flat = sorted(i for b in batches for i in b)
    assert flat == list(range(23))
    assert batches == epoch_batches(23, sizes, 4, seed=1, epoch=0)
    assert batches != epoch_batches(23, sizes, 4, seed=1, epoch=1)


def test_resume_reproduces_trajectory(tmp_path):
    exs = toy_examples(8)
    cfg = TrainConfig(**{**TINY_TRAIN, "max_steps": 6, "save_every": 3, "dropout": 0.2})
    full = train(cfg, exs, out_dir=tmp_path / "full")
    part = train(TrainConfig(**{**TINY_TRAIN, "max_steps": 3, "dropout": 0.2, "save_every": 3}), exs,
                 out_dir=tmp_path / "part")
    resumed = train(cfg, exs, out_dir=tmp_path / "part", resume=tmp_path / "part" / "step_3.ckpt")
    assert [h.loss for h in part.history + resumed.history] == [h.loss for h in full.history]
    a, _ = checkpoint.load(tmp_path / "full" / "last.ckpt")
    b, _ = checkpoint.load(tmp_path / "part" / "last.ckpt")
    assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
    rows = list(csv.reader(open(tmp_path / "part" / "metrics.csv")))
    assert rows[0] == ["step", "loss", "lr", "grad_norm", "dev_bleu"]
    assert [int(r[0]) for r in rows[1:]] == list(range(1, 7))


def test_loss_trend_and_finite_gradients():
    from graphtransformer.toydata import toy_corpus

    exs = [make_example(g, s) for g, s in toy_corpus(20)]
    cfg = TrainConfig(**{**TINY_TRAIN, "max_steps": 500, "batch_size": 8, "dropout": 0.1, "log_every": 100})
    result = train(cfg, exs)
    losses = np.array([h.loss for h in result.history])
    assert all(np.isfinite(h.grad_norm) for h in result.history)
    slope = np.polyfit(np.arange(len(losses)), losses, 1)[0]
    assert slope < 0
    assert losses[-50:].mean() < 0.5 * losses[:50].mean()
    assert evaluate_accuracy(result.model, exs) > 0.5


def test_divergence_keeps_last_good_checkpoint(tmp_path, monkeypatch):
    exs = toy_examples(4)
    cfg = TrainConfig(**{**TINY_TRAIN, "max_steps": 5})
    from graphtransformer import model as model_mod

    real = model_mod.Graph2Seq.loss
    calls = {"n": 0}

    def flaky(self, batch, stream=None, force_gate=None):
        res = real(self, batch, stream, force_gate)
        calls["n"] += 1
        if calls["n"] == 3:
            return LossResult(res.loss * float("nan"), res.n_tokens, res.n_correct, res.n_clamped)
        return res

    monkeypatch.setattr(model_mod.Graph2Seq, "loss", flaky)
    with pytest.raises(TrainingDiverged, match="step 3"):
        train(cfg, exs, out_dir=tmp_path)
    _, meta = checkpoint.load(tmp_path / "last.ckpt")
    assert meta["step"] == 2


def test_checkpoint_version_guard(tmp_path):
    exs = toy_examples(3)
    train(TrainConfig(**{**TINY_TRAIN, "max_steps": 1}), exs, out_dir=tmp_path)
    model, tensors, meta = load_model(tmp_path / "last.ckpt")
    assert any(k.startswith("adam.m.") for k in tensors)
    meta["code_version"] = "0.0.0-other"
    checkpoint.save(tmp_path / "old.ckpt", tensors, meta)
    with pytest.raises(checkpoint.CheckpointError, match="version"):
        load_model(tmp_path / "old.ckpt")
