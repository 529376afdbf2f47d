"""Transformer decoder with a copy mechanism over graph nodes, plus greedy and beam search.

Output distributions live over an extended vocabulary: the closed target
vocabulary ``V`` followed by node surface forms of the batch that are not
in ``V``. A node whose label is in ``V`` copies into that same column, so
generation and copy probabilities for one surface form are summed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DropoutStream, Tensor
from .nn import NEG_INF, CharCNN, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, normal, xavier
from .vocab import BOS, EOS, UNK, Vocab

MAX_STEPS = 256


class DecoderBlock(Module):
    def __init__(self, rng, d_model, heads, d_ff):
        self.self_attn = MultiHeadAttention(rng, d_model, heads)
        self.ln1 = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(rng, d_model, heads)
        self.ln2 = LayerNorm(d_model)
        self.ffn = FeedForward(rng, d_model, d_ff)
        self.ln3 = LayerNorm(d_model)

    def __call__(self, y, self_kv, cross_kv, self_blocked, cross_blocked, dropout=0.0, stream=None):
        tr = self.training
        a, _ = self.self_attn.attend(y, *self_kv, self_blocked)
        y = self.ln1(y + ad.dropout(a, dropout, stream, tr))
        c, cross_w = self.cross_attn.attend(y, *cross_kv, cross_blocked)
        y = self.ln2(y + ad.dropout(c, dropout, stream, tr))
        f = self.ffn(y, dropout, stream)
        return self.ln3(y + ad.dropout(f, dropout, stream, tr)), cross_w


@dataclass
class CopyOutput:
    probs: Tensor  # [B, T, V_ext]
    p_gen: Tensor  # [B, T, 1]
    gen: Tensor  # [B, T, V]
    copy_attn: Tensor  # [B, T, N]


@dataclass
class DecoderState:
    """Incremental decoding cache: projected self-attention keys/values per layer."""
    tokens: list[list[int]]
    keys: list[Tensor | None]
    values: list[Tensor | None]
    step: int = 0


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    finished: bool
    copied: tuple[bool, ...] = ()
    words: tuple[str, ...] = field(default=(), compare=False)


class SequenceDecoder(Module):
    def __init__(self, rng, tgt_vocab: Vocab, n_chars: int, layers: int = 6, d_model: int = 512, heads: int = 8,
                 d_ff: int = 1024, token_dim: int = 300, char_dim: int = 32, char_filters: int = 256,
                 char_width: int = 3, char_out: int = 128):
        self.vocab = tgt_vocab
        self.token_emb = normal(rng, (len(tgt_vocab), token_dim), 0.1)
        self.char_cnn = CharCNN(rng, n_chars, char_dim, char_filters, char_width, char_out)
        self.proj = Linear(rng, token_dim + char_out, d_model)
        self.pos_emb = normal(rng, (MAX_STEPS, d_model), 0.1)
        self.blocks = [DecoderBlock(rng, d_model, heads, d_ff) for _ in range(layers)]
        self.copy_q = xavier(rng, d_model, d_model)
        self.copy_k = xavier(rng, d_model, d_model)
        self.gate = Linear(rng, d_model, 2)
        self.generator = Linear(rng, d_model, len(tgt_vocab))
        self.d_model = d_model
        self.char_vocab: Vocab | None = None

    # -- embeddings ------------------------------------------------------
    def embed(self, token_ids: np.ndarray, token_chars: Sequence[Sequence[Sequence[int]]], start: int,
              x_global: Tensor | None, dropout=0.0, stream=None) -> Tensor:
        """Input embeddings ``[B, T, d]`` for steps ``start..start+T-1``.

        ``token_ids`` may hold extended-vocabulary ids; those embed as UNK
        while their characters still feed the char CNN.
        """
        bsz, t = token_ids.shape
        ids = np.where(token_ids < len(self.vocab), token_ids, self.vocab.id(UNK))
        words: dict[tuple[int, ...], int] = {}
        slot = np.zeros((bsz, t), dtype=np.int64)
        for b in range(bsz):
            for k in range(t):
                slot[b, k] = words.setdefault(tuple(token_chars[b][k]), len(words))
        chars = self.char_cnn([list(w) for w in words])
        emb = ad.concat([ad.embedding_lookup(self.token_emb, ids), ad.embedding_lookup(chars, slot)], axis=-1)
        y = self.proj(emb) + self.pos_emb[start:start + t]
        if x_global is not None:
            y = y + x_global.reshape(bsz, 1, self.d_model)
        return ad.dropout(y, dropout, stream, self.training)

    # -- copy mixture ----------------------------------------------------
    def copy_distribution(self, h: Tensor, memory: Tensor, memory_mask: np.ndarray, copy_map: np.ndarray,
                          force_gate: str | None = None) -> CopyOutput:
        """Mixture of generation over ``V`` and copy attention over nodes.

        ``copy_map``: ``[B, N, V_ext]`` one-hot rows mapping each ordinary node
        to the column of its surface form (all-zero rows for global/padding).
        """
        bsz, t, _ = h.shape
        v_ext = copy_map.shape[-1]
        gen = ad.softmax(self.generator(h), axis=-1)
        v = gen.shape[-1]
        if v_ext > v:
            gen_ext = ad.concat([gen, ad.Tensor(np.zeros((bsz, t, v_ext - v), dtype=gen.data.dtype))], axis=-1)
        else:
            gen_ext = gen
        scores = (h @ self.copy_q) @ (memory @ self.copy_k).swapaxes(-1, -2) * (1.0 / math.sqrt(self.d_model))
        scores = ad.masked_fill(scores, ~memory_mask[:, None, :], NEG_INF)
        attn = ad.softmax(scores, axis=-1)  # [B, T, N]
        copy = attn @ ad.Tensor(copy_map.astype(h.data.dtype))
        gate = ad.softmax(self.gate(h), axis=-1)
        if force_gate == "gen":
            gate = ad.Tensor(np.broadcast_to(np.array([1.0, 0.0], dtype=h.data.dtype), gate.shape).copy())
        elif force_gate == "copy":
            gate = ad.Tensor(np.broadcast_to(np.array([0.0, 1.0], dtype=h.data.dtype), gate.shape).copy())
        p_gen, p_copy = ad.split(gate, [1, 1], axis=-1)
        probs = p_gen * gen_ext + p_copy * copy
        return CopyOutput(probs, p_gen, gen, attn)

    # -- teacher forcing -------------------------------------------------
    def __call__(self, memory: Tensor, memory_mask: np.ndarray, x_global: Tensor | None, in_ids: np.ndarray,
                 in_chars, dropout=0.0, stream: DropoutStream | None = None) -> Tensor:
        """Hidden states ``[B, T, d]`` for teacher-forced inputs (``in_ids[:, 0]`` is BOS)."""
        bsz, t = in_ids.shape
        if t == 0:
            raise ValueError("empty target sequence")
        y = self.embed(in_ids, in_chars, 0, x_global, dropout, stream)
        causal = np.triu(np.ones((t, t), dtype=bool), k=1)[None, None]
        cross_blocked = ~memory_mask[:, None, None, :]
        for block in self.blocks:
            self_kv = block.self_attn.project_kv(y)
            cross_kv = block.cross_attn.project_kv(memory)
            y, _ = block(y, self_kv, cross_kv, causal, cross_blocked, dropout, stream)
        return y

    # -- incremental decoding ---------------------------------------------
    def start(self, bsz: int) -> DecoderState:
        return DecoderState([[] for _ in range(bsz)], [None] * len(self.blocks), [None] * len(self.blocks))

    def cross_cache(self, memory: Tensor):
        return [block.cross_attn.project_kv(memory) for block in self.blocks]

    def step(self, state: DecoderState, token_ids: np.ndarray, token_chars, memory_mask: np.ndarray,
             x_global: Tensor | None, cross_kv) -> tuple[Tensor, DecoderState]:
        """Advance every row by one token; returns ``h_t`` as ``[B, 1, d]`` and the extended cache."""
        y = self.embed(token_ids[:, None], [[c] for c in token_chars], state.step, x_global)
        cross_blocked = ~memory_mask[:, None, None, :]
        keys, values = [], []
        for li, block in enumerate(self.blocks):
            k_new, v_new = block.self_attn.project_kv(y)
            k = k_new if state.keys[li] is None else ad.concat([state.keys[li], k_new], axis=2)
            v = v_new if state.values[li] is None else ad.concat([state.values[li], v_new], axis=2)
            keys.append(k)
            values.append(v)
            y, _ = block(y, (k, v), cross_kv[li], None, cross_blocked)
        tokens = [prev + [int(t)] for prev, t in zip(state.tokens, token_ids)]
        return y, DecoderState(tokens, keys, values, state.step + 1)

    @staticmethod
    def reorder(state: DecoderState, rows: np.ndarray) -> DecoderState:
        return DecoderState(
            [list(state.tokens[r]) for r in rows],
            [None if k is None else ad.Tensor(k.data[rows]) for k in state.keys],
            [None if v is None else ad.Tensor(v.data[rows]) for v in state.values],
            state.step,
        )


@dataclass
class DecodeContext:
    """Everything search needs about one encoded graph (batch size 1)."""
    memory: Tensor  # [1, N, d]
    memory_mask: np.ndarray  # [1, N]
    x_global: Tensor | None  # [1, d]
    copy_map: np.ndarray  # [1, N, V_ext]
    ext_tokens: list[str]  # strings of extended ids V, V+1, ...


def _token_string(dec: SequenceDecoder, ctx: DecodeContext, i: int) -> str:
    v = len(dec.vocab)
    return dec.vocab.token(i) if i < v else ctx.ext_tokens[i - v]


def _chars(dec: SequenceDecoder, word: str) -> list[int]:
    return dec.char_vocab.ids(list(word)) if dec.char_vocab is not None else [1]


def _tile(ctx: DecodeContext, k: int) -> DecodeContext:
    rows = np.zeros(k, dtype=np.int64)
    return DecodeContext(
        ad.Tensor(ctx.memory.data[rows]), ctx.memory_mask[rows],
        None if ctx.x_global is None else ad.Tensor(ctx.x_global.data[rows]),
        ctx.copy_map[rows], ctx.ext_tokens,
    )


def _log_probs(dec: SequenceDecoder, state: DecoderState, last: np.ndarray, ctx: DecodeContext, cross_kv):
    words = [_token_string(dec, ctx, int(t)) for t in last]
    h, state = dec.step(state, last, [_chars(dec, w) for w in words], ctx.memory_mask, ctx.x_global, cross_kv)
    out = dec.copy_distribution(h, ctx.memory, ctx.memory_mask, ctx.copy_map)
    with np.errstate(divide="ignore"):
        return np.log(out.probs.data[:, 0, :].astype(np.float64)), state


def greedy_decode(dec: SequenceDecoder, ctx: DecodeContext, max_len: int = 50) -> Hypothesis:
    bos, eos = dec.vocab.id(BOS), dec.vocab.id(EOS)
    with ad.no_grad():
        cross_kv = dec.cross_cache(ctx.memory)
        state = dec.start(1)
        last = np.array([bos])
        tokens, score = [], 0.0
        for _ in range(max_len):
            logp, state = _log_probs(dec, state, last, ctx, cross_kv)
            nxt = int(np.argmax(logp[0]))
            score += float(logp[0, nxt])
            tokens.append(nxt)
            if nxt == eos:
                break
            last = np.array([nxt])
    return _finish(dec, ctx, tokens, score, bool(tokens and tokens[-1] == eos))


def _finish(dec, ctx, tokens, score, finished) -> Hypothesis:
    v = len(dec.vocab)
    eos = dec.vocab.id(EOS)
    words = tuple(_token_string(dec, ctx, t) for t in tokens if t != eos)
    return Hypothesis(tuple(tokens), score, finished, tuple(t >= v for t in tokens), words)


def beam_search(dec: SequenceDecoder, ctx: DecodeContext, beam: int = 8, max_len: int = 50,
                length_normalize: bool = False, postprocess: Callable[[list[str]], list[str]] | None = None
                ) -> Hypothesis:
    """Lockstep beam search; finished hypotheses retire and shrink the live beam.

    Returns the best finished hypothesis, or the best unfinished one (``finished=False``)
    when ``max_len`` is reached first.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    bos, eos = dec.vocab.id(BOS), dec.vocab.id(EOS)

    def rank(h: Hypothesis) -> float:
        return h.score / max(len(h.tokens), 1) if length_normalize else h.score

    with ad.no_grad():
        ctx_k = _tile(ctx, beam)
        cross_kv_full = dec.cross_cache(ctx_k.memory)
        state = dec.start(1)
        live_tokens: list[list[int]] = [[]]
        live_scores = np.zeros(1)
        last = np.array([bos])
        finished: list[Hypothesis] = []
        for _ in range(max_len):
            k = len(live_tokens)
            sub = DecodeContext(ad.Tensor(ctx_k.memory.data[:k]), ctx_k.memory_mask[:k],
                                None if ctx_k.x_global is None else ad.Tensor(ctx_k.x_global.data[:k]),
                                ctx_k.copy_map[:k], ctx.ext_tokens)
            cross_kv = [(ad.Tensor(kk.data[:k]), ad.Tensor(vv.data[:k])) for kk, vv in cross_kv_full]
            logp, state = _log_probs(dec, state, last, sub, cross_kv)
            cand = (live_scores[:, None] + logp).reshape(-1)
            n_live = beam - len(finished)
            order = np.argsort(-cand, kind="stable")[:n_live]
            new_tokens, new_scores, rows, nxt = [], [], [], []
            for c in order:
                r, tok = divmod(int(c), logp.shape[1])
                if not np.isfinite(cand[c]):
                    continue
                toks = live_tokens[r] + [tok]
                if tok == eos:
                    finished.append(_finish(dec, ctx, toks, float(cand[c]), True))
                else:
                    new_tokens.append(toks)
                    new_scores.append(float(cand[c]))
                    rows.append(r)
                    nxt.append(tok)
            if not new_tokens or len(finished) >= beam:
                break
            state = dec.reorder(state, np.array(rows))
            live_tokens, live_scores, last = new_tokens, np.array(new_scores), np.array(nxt)
    if finished:
        best = max(finished, key=rank)
    else:
        best_i = int(np.argmax(live_scores))
        best = _finish(dec, ctx, live_tokens[best_i], float(live_scores[best_i]), False)
    if postprocess is not None:
        best = Hypothesis(best.tokens, best.score, best.finished, best.copied, tuple(postprocess(list(best.words))))
    return best
