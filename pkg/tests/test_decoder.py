import numpy as np
import pytest

from graphtransformer import autodiff as ad
from graphtransformer.decoder import beam_search, greedy_decode
from graphtransformer.model import make_example
from graphtransformer.toydata import svo_graph
from helpers import tiny_model, toy_examples


def encoded(model, examples):
    model.eval()
    batch = model.make_batch(examples)
    with ad.no_grad():
        enc = model.encode(batch)
    return batch, enc


def test_copy_mixture_is_a_distribution():
    exs = toy_examples(4)
    model = tiny_model(exs)
    batch, enc = encoded(model, exs[:1])
    rng = np.random.default_rng(0)
    h = ad.Tensor(rng.normal(scale=3.0, size=(1, 10_000, model.config.d_model)))
    with ad.no_grad():
        out = model.decoder.copy_distribution(h, enc.states, enc.node_mask, batch.copy_map)
    assert np.max(np.abs(out.probs.data.sum(-1) - 1.0)) < 1e-6
    assert np.all(out.probs.data >= 0)


def test_forced_generation_gate_equals_vocab_softmax():
    exs = toy_examples(4)
    model = tiny_model(exs)
    batch, enc = encoded(model, exs[:2])
    h = ad.Tensor(np.random.default_rng(1).normal(size=(2, 50, model.config.d_model)))
    with ad.no_grad():
        out = model.decoder.copy_distribution(h, enc.states, enc.node_mask, batch.copy_map, force_gate="gen")
        ref = ad.softmax(model.decoder.generator(h), axis=-1).data
    v = len(model.vocabs.token)
    assert np.array_equal(out.probs.data[..., :v], ref)
    assert not out.probs.data[..., v:].any()


def test_shared_forms_sum_both_routes(fp64):
    # target vocabulary contains "dog"; the graph has a node "dog" and an OOV node "zebra"
    exs = [make_example(svo_graph("see-01", "dog", "cat"), "the dog sees the cat")]
    model = tiny_model(exs)
    test_ex = make_example(svo_graph("see-01", "dog", "zebra"))
    batch, enc = encoded(model, [test_ex])
    assert batch.ext_tokens == ["see-01", "zebra"]
    h = ad.Tensor(np.random.default_rng(2).normal(size=(1, 3, model.config.d_model)))
    out = model.decoder.copy_distribution(h, enc.states, enc.node_mask, batch.copy_map)
    p_gen = out.p_gen.data[..., 0]
    attn = out.copy_attn.data
    dog = model.vocabs.token.id("dog")
    np.testing.assert_allclose(out.probs.data[..., dog], p_gen * out.gen.data[..., dog] + (1 - p_gen) * attn[..., 1])
    zebra = len(model.vocabs.token) + 1
    np.testing.assert_allclose(out.probs.data[..., zebra], (1 - p_gen) * attn[..., 2])


def test_incremental_cache_matches_full_recomputation(fp64):
    exs = toy_examples(5)
    model = tiny_model(exs, layers=2)
    batch, enc = encoded(model, exs[:3])
    dec = model.decoder
    with ad.no_grad():
        full = dec(enc.states, enc.node_mask, enc.x_global, batch.in_ids, batch.in_chars).data
        cross = dec.cross_cache(enc.states)
        state = dec.start(3)
        steps = []
        for t in range(batch.in_ids.shape[1]):
            chars = [batch.in_chars[b][t] for b in range(3)]
            h, state = dec.step(state, batch.in_ids[:, t], chars, enc.node_mask, enc.x_global, cross)
            steps.append(h.data[:, 0])
    inc = np.stack(steps, axis=1)
    assert np.max(np.abs(inc - full)) < 1e-10


def test_beam_one_equals_greedy():
    exs = toy_examples(8)
    model = tiny_model(exs, layers=2)
    for ex in exs:
        ctx, _ = model.decode_context(ex)
        g = greedy_decode(model.decoder, ctx, max_len=12)
        b = beam_search(model.decoder, ctx, beam=1, max_len=12)
        assert g.tokens == b.tokens and g.score == pytest.approx(b.score, abs=1e-9)


def test_beam_search_scores_and_postprocess():
    exs = toy_examples(6)
    model = tiny_model(exs, layers=1)
    ctx, _ = model.decode_context(exs[0])
    wide = beam_search(model.decoder, ctx, beam=4, max_len=6)
    narrow = beam_search(model.decoder, ctx, beam=1, max_len=6)
    if wide.finished and narrow.finished:
        assert wide.score >= narrow.score - 1e-9
    capped = beam_search(model.decoder, ctx, beam=3, max_len=1)
    assert len(capped.tokens) == 1
    up = beam_search(model.decoder, ctx, beam=2, max_len=4, postprocess=lambda ws: [w.upper() for w in ws])
    assert all(w == w.upper() for w in up.words)
    with pytest.raises(ValueError):
        beam_search(model.decoder, ctx, beam=0)
