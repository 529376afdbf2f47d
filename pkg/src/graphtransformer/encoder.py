"""Relation-enhanced global attention encoder.

Every node attends to every node of its graph (global node included); the
score between nodes i and j mixes content and relation:

    s_ij = (x_i + r_{i->j}) W_q^T W_k (x_j + r_{j->i})
         = x_i.W_q^T W_k.x_j + x_i.W_q^T W_k.r_{j->i}
           + r_{i->j}.W_q^T W_k.x_j + r_{i->j}.W_q^T W_k.r_{j->i}

computed here term by term, per head, then divided by sqrt(d_head).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DropoutStream, Tensor
from .nn import NEG_INF, CharCNN, FeedForward, LayerNorm, Linear, Module, merge_heads, normal, split_heads, xavier
from .relation import RelationTable

MAX_POSITION = 255


@dataclass
class AttentionTerms:
    content: Tensor
    source_relation: Tensor
    target_relation: Tensor
    universal_relation: Tensor


class RelationAttention(Module):
    def __init__(self, rng, d_model: int, heads: int):
        self.w_q = xavier(rng, d_model, d_model)
        self.w_k = xavier(rng, d_model, d_model)
        self.w_v = xavier(rng, d_model, d_model)
        self.out = Linear(rng, d_model, d_model)
        self.heads = heads
        self.d_head = d_model // heads

    def terms(self, x: Tensor, rel: RelationTable) -> AttentionTerms:
        """The four unscaled score terms, each ``[B, H, N, N]``."""
        h = self.heads
        qx = split_heads(x @ self.w_q, h)  # [B, H, N, dh]
        kx = split_heads(x @ self.w_k, h)
        qf = split_heads(rel.fwd @ self.w_q, h)  # [B, N(i), H, N(j), dh]
        kb = split_heads(rel.bwd @ self.w_k, h)
        qf = qf.transpose(0, 2, 1, 3, 4)  # [B, H, N(i), N(j), dh]
        kb = kb.transpose(0, 2, 1, 3, 4)
        b, _, n, dh = qx.shape
        content = qx @ kx.swapaxes(-1, -2)
        source = (kb * qx.reshape(b, h, n, 1, dh)).sum(axis=-1)
        target = (qf * kx.reshape(b, h, 1, n, dh)).sum(axis=-1)
        universal = (qf * kb).sum(axis=-1)
        return AttentionTerms(content, source, target, universal)

    def scores(self, x: Tensor, rel: RelationTable) -> Tensor:
        t = self.terms(x, rel)
        s = ((t.content + t.source_relation) + t.target_relation) + t.universal_relation
        return s / math.sqrt(self.d_head)

    def __call__(self, x: Tensor, rel: RelationTable, key_mask: np.ndarray | None = None):
        """Returns ``(output [B, N, d], attention [B, H, N, N])``; ``key_mask`` marks real nodes."""
        s = self.scores(x, rel)
        if not np.all(np.isfinite(s.data)):
            b, hh, i, j = np.argwhere(~np.isfinite(s.data))[0]
            raise FloatingPointError(f"non-finite attention score for pair ({i}, {j}) in head {hh} (batch item {b})")
        if key_mask is not None:
            s = ad.masked_fill(s, ~key_mask[:, None, None, :], NEG_INF)
        attn = ad.softmax(s, axis=-1)
        v = split_heads(x @ self.w_v, self.heads)
        return self.out(merge_heads(attn @ v)), attn


class EncoderBlock(Module):
    def __init__(self, rng, d_model: int, heads: int, d_ff: int):
        self.attn = RelationAttention(rng, d_model, heads)
        self.ln1 = LayerNorm(d_model)
        self.ffn = FeedForward(rng, d_model, d_ff)
        self.ln2 = LayerNorm(d_model)

    def __call__(self, x, rel, key_mask=None, dropout=0.0, stream=None):
        a, weights = self.attn(x, rel, key_mask)
        x = self.ln1(x + ad.dropout(a, dropout, stream, self.training))
        f = self.ffn(x, dropout, stream)
        x = self.ln2(x + ad.dropout(f, dropout, stream, self.training))
        return x, weights


@dataclass
class EncoderInput:
    """A padded batch of augmented graphs.

    ``node_ids``/``char_ids``/``positions`` cover ordinary nodes; the global
    node sits at row ``n_b`` of graph ``b`` and rows beyond it are padding.
    """
    node_ids: np.ndarray  # [B, N]
    char_ids: list[list[list[int]]]  # per graph, per ordinary node
    positions: np.ndarray  # [B, N]
    sizes: np.ndarray  # [B] ordinary node counts

    @property
    def n_pad(self) -> int:
        return self.node_ids.shape[1]

    @property
    def key_mask(self) -> np.ndarray:
        return np.arange(self.n_pad)[None, :] <= self.sizes[:, None]

    @property
    def node_mask(self) -> np.ndarray:
        """Ordinary nodes only (global and padding excluded)."""
        return np.arange(self.n_pad)[None, :] < self.sizes[:, None]


@dataclass
class EncoderOutput:
    states: Tensor  # [B, N, d] including the global row
    node_mask: np.ndarray  # [B, N]
    x_global: Tensor  # [B, d]
    attentions: list[Tensor]  # per layer [B, H, N, N]

    def node_reps(self, b: int) -> np.ndarray:
        n = int(self.node_mask[b].sum())
        return self.states.data[b, :n]


class GraphEncoder(Module):
    def __init__(self, rng, n_nodes: int, n_chars: int, layers: int = 6, d_model: int = 512, heads: int = 8,
                 d_ff: int = 1024, node_dim: int = 300, char_dim: int = 32, char_filters: int = 256,
                 char_width: int = 3, char_out: int = 128):
        self.node_emb = normal(rng, (n_nodes, node_dim), 0.1)
        self.char_cnn = CharCNN(rng, n_chars, char_dim, char_filters, char_width, char_out)
        self.proj = Linear(rng, node_dim + char_out, d_model)
        self.pos_emb = normal(rng, (MAX_POSITION + 1, d_model), 0.1)
        self.global_emb = normal(rng, (d_model,), 0.1)
        self.blocks = [EncoderBlock(rng, d_model, heads, d_ff) for _ in range(layers)]
        self.d_model = d_model

    def node_init(self, inp: EncoderInput, dropout=0.0, stream: DropoutStream | None = None) -> Tensor:
        """Layer-0 states ``[B, N, d]``: projected word+char embedding plus position embedding."""
        bsz, n_pad = inp.node_ids.shape
        words: dict[tuple[int, ...], int] = {}
        slot = np.zeros((bsz, n_pad), dtype=np.int64)
        for b, graph_chars in enumerate(inp.char_ids):
            for i, chars in enumerate(graph_chars):
                slot[b, i] = words.setdefault(tuple(chars), len(words))
        char_vecs = self.char_cnn([list(w) for w in words])  # [W, c]
        char_vecs = ad.concat([char_vecs, ad.Tensor(np.zeros((1, char_vecs.shape[1]), dtype=char_vecs.data.dtype))], 0)
        slot[~inp.node_mask] = len(words)
        emb = ad.concat([ad.embedding_lookup(self.node_emb, inp.node_ids),
                         ad.embedding_lookup(char_vecs, slot)], axis=-1)
        x = self.proj(emb)
        is_global = (np.arange(n_pad)[None, :] == inp.sizes[:, None])
        x = ad.masked_fill(x, is_global[..., None], 0.0) + self.global_emb * is_global[..., None].astype(x.data.dtype)
        x = ad.masked_fill(x, ~inp.key_mask[..., None], 0.0)
        x = x + ad.embedding_lookup(self.pos_emb, np.minimum(inp.positions, MAX_POSITION))
        return ad.dropout(x, dropout, stream, self.training)

    def __call__(self, inp: EncoderInput, rel: RelationTable, dropout=0.0,
                 stream: DropoutStream | None = None) -> EncoderOutput:
        x = self.node_init(inp, dropout, stream)
        key_mask = inp.key_mask
        attns = []
        for block in self.blocks:
            x, w = block(x, rel, key_mask, dropout, stream)
            attns.append(w)
        x_global = x[np.arange(x.shape[0]), inp.sizes]
        return EncoderOutput(x, inp.node_mask, x_global, attns)
