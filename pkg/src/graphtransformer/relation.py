"""Distributed encodings of shortest relation paths.

A path of edge labels is run through a forward and a backward GRU; the two
final states are concatenated into ``r_ij`` and a bias-free linear map
splits it into a forward part ``r_{i->j}`` and a backward part
``r_{j->i}``, both in model space.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Module, normal, xavier, zeros
from .relpath import Path, Selection, dedup_paths
from .vocab import Vocab


def gru_params(rng, d_in: int, d_h: int) -> dict[str, Tensor]:
    p = {}
    for gate in ("z", "r", "h"):
        p[f"W_{gate}"] = xavier(rng, d_in, d_h)
        p[f"U_{gate}"] = xavier(rng, d_h, d_h)
        p[f"b_{gate}"] = zeros(d_h)
    return p


@dataclass
class RelationTable:
    """Batched relation encodings: ``fwd[b, i, j] = r_{i->j}`` and ``bwd[b, i, j] = r_{j->i}`` for pair (i, j)."""
    fwd: Tensor
    bwd: Tensor


class RelationEncoder(Module):
    def __init__(self, rng, edge_vocab: Vocab, edge_dim: int = 200, hidden: int = 128, d_model: int = 512):
        self.edge_vocab = edge_vocab
        self.edge_emb = normal(rng, (len(edge_vocab), edge_dim), 0.1)
        self.gru_f = gru_params(rng, edge_dim, hidden)
        self.gru_b = gru_params(rng, edge_dim, hidden)
        self.w_r = xavier(rng, 2 * hidden, 2 * d_model)
        self.hidden = hidden
        self.d_model = d_model

    def label_ids(self, labels: Sequence[str]) -> list[int]:
        return [self.edge_vocab.id(lab) for lab in labels]

    def encode_paths(self, paths: Sequence[Sequence[int]]) -> Tensor:
        """Encode label-id sequences into ``[len(paths), 2 * hidden]``.

        Paths are grouped by length so each group runs as one batch without masking.
        """
        if any(len(p) == 0 for p in paths):
            raise ValueError("relation paths must be non-empty")
        n_edges = self.edge_emb.shape[0]
        for p in paths:
            for k in p:
                if not 0 <= k < n_edges:
                    raise KeyError(f"edge label id {k} outside the edge vocabulary")
        by_len: dict[int, list[int]] = {}
        for i, p in enumerate(paths):
            by_len.setdefault(len(p), []).append(i)
        parts, order = [], []
        dt = ad.get_default_dtype()
        for length in sorted(by_len):
            idx = by_len[length]
            ids = np.array([paths[i] for i in idx], dtype=np.int64)
            emb = ad.embedding_lookup(self.edge_emb, ids)  # [P, L, E]
            h_f = ad.Tensor(np.zeros((len(idx), self.hidden), dtype=dt))
            h_b = ad.Tensor(np.zeros((len(idx), self.hidden), dtype=dt))
            steps = [emb[:, t, :] for t in range(length)]
            for t in range(length):
                h_f = ad.gru_cell(h_f, steps[t], self.gru_f)
            for t in reversed(range(length)):
                h_b = ad.gru_cell(h_b, steps[t], self.gru_b)
            parts.append(ad.concat([h_f, h_b], axis=-1))
            order.extend(idx)
        enc = ad.concat(parts, axis=0) if len(parts) > 1 else parts[0]
        inverse = np.argsort(np.array(order))
        if np.array_equal(inverse, np.arange(len(order))):
            return enc
        return enc[inverse]

    def encode_path(self, labels: Sequence[str]) -> Tensor:
        return self.encode_paths([self.label_ids(labels)])[0]

    def split_relation(self, r: Tensor) -> tuple[Tensor, Tensor]:
        if r.shape[-1] != 2 * self.hidden:
            raise ad.ShapeError(f"split_relation: expected last dim {2 * self.hidden}, got {r.shape}")
        fwd, bwd = ad.split(r @ self.w_r, [self.d_model, self.d_model], axis=-1)
        return fwd, bwd

    def pair_vectors(self, selection: Selection) -> dict[tuple[int, int], Tensor]:
        """Unsplit ``r_ij`` per pair (averaged over retained paths); reference route for tests."""
        out = {}
        for i in range(selection.n):
            for j in range(selection.n):
                enc = [self.encode_path(p) for p in selection[i, j]]
                acc = enc[0]
                for e in enc[1:]:
                    acc = acc + e
                out[i, j] = acc * (1.0 / len(enc)) if len(enc) > 1 else acc
        return out

    def encode_table(self, selections: Sequence[Selection], n_pad: int | None = None) -> RelationTable:
        """Build padded ``[B, N, N, d_model]`` forward/backward relation tensors for a batch.

        Distinct paths across the batch are encoded once. The linear split is
        applied to the distinct encodings, then rows are gathered per pair and
        averaged over the pair's retained paths. Padding pairs read a zero row.
        """
        dd = dedup_paths(selections)
        enc = self.encode_paths([self.label_ids(p) for p in dd.unique_paths])
        split = enc @ self.w_r  # [U, 2 d]
        zero_row = ad.Tensor(np.zeros((1, split.shape[1]), dtype=split.data.dtype))
        split = ad.concat([split, zero_row], axis=0)
        zero_id = len(dd.unique_paths)
        n_pad = n_pad or max(s.n for s in selections)
        k_max = max(len(ix) for rows in dd.index for row in rows for ix in row)
        ids = np.full((len(selections), n_pad, n_pad, k_max), zero_id, dtype=np.int64)
        weights = np.zeros((len(selections), n_pad, n_pad, k_max), dtype=split.data.dtype)
        for b, rows in enumerate(dd.index):
            for i, row in enumerate(rows):
                for j, ix in enumerate(row):
                    ids[b, i, j, : len(ix)] = ix
                    weights[b, i, j, : len(ix)] = 1.0 / len(ix)
        gathered = ad.embedding_lookup(split, ids)  # [B, N, N, K, 2d]
        if k_max == 1:
            full = gathered[:, :, :, 0, :]
        else:
            full = (gathered * weights[..., None]).sum(axis=3)
        fwd, bwd = ad.split(full, [self.d_model, self.d_model], axis=-1)
        return RelationTable(fwd, bwd)
