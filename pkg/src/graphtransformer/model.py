"""The full graph-to-sequence model: preprocessing, batching, loss and generation."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DropoutStream, Tensor
from .decoder import DecodeContext, Hypothesis, SequenceDecoder, beam_search, greedy_decode
from .encoder import EncoderInput, EncoderOutput, GraphEncoder
from .graph import (GLOBAL_LABEL, SELF_LABEL, GraphStats, LabeledGraph, absolute_positions, augment, graph_from_json,
                    graph_stats, graph_to_json, reverse_label)
from .nn import Module
from .relation import RelationEncoder, RelationTable
from .relpath import PathTable, Selection, all_shortest_paths, select_paths
from .vocab import BOS, EOS, PAD, UNK, Vocab

PROB_FLOOR = 1e-12


@dataclass
class ModelConfig:
    layers: int = 6
    d_model: int = 512
    heads: int = 8
    d_ff: int = 1024
    node_dim: int = 300
    edge_dim: int = 200
    token_dim: int = 300
    char_dim: int = 32
    char_filters: int = 256
    char_width: int = 3
    char_out: int = 128
    rel_hidden: int = 128
    dropout: float = 0.2
    path_cap: int = 4
    max_path_len: int = 8

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Example:
    """A preprocessed (augmented) graph with its path table and optional target tokens."""
    graph: LabeledGraph
    positions: dict[int, int]
    paths: PathTable
    stats: GraphStats
    target: list[str] | None = None

    @property
    def n(self) -> int:
        return self.graph.n_original


def make_example(graph: LabeledGraph, target: str | Sequence[str] | None = None, cap: int = 4,
                 max_len: int | None = 8) -> Example:
    stats = graph_stats(graph)
    g = graph if graph.augmented else augment(graph)
    if isinstance(target, str):
        target = target.split()
    return Example(g, absolute_positions(g), all_shortest_paths(g, cap, max_len), stats,
                   list(target) if target is not None else None)


def example_to_json(ex: Example) -> dict:
    """One JSONL record: augmented graph, positions, statistics, path table, target."""
    t = ex.paths
    return {
        "graph": graph_to_json(ex.graph),
        "positions": [ex.positions[i] for i in range(ex.graph.n)],
        "stats": ex.stats.as_dict(),
        "paths": {"n": t.n, "paths": [[[list(p) for p in t.paths[i][j]] for j in range(t.n)] for i in range(t.n)],
                  "lengths": t.lengths.tolist()},
        "target": None if ex.target is None else " ".join(ex.target),
    }


def example_from_json(obj: dict) -> Example:
    g = graph_from_json(obj["graph"])
    if not g.augmented:
        raise ValueError("expected an augmented graph record")
    p = obj["paths"]
    table = PathTable(p["n"], tuple(tuple(tuple(tuple(x) for x in cell) for cell in row) for row in p["paths"]),
                      np.array(p["lengths"], dtype=np.int64))
    st = obj["stats"]
    stats = GraphStats(st["size"], st["diameter"], st["reentrancies"], st.get("disconnected", False))
    target = obj.get("target")
    return Example(g, dict(enumerate(obj["positions"])), table, stats,
                   target.split() if target is not None else None)


@dataclass
class Vocabs:
    node: Vocab
    edge: Vocab
    token: Vocab
    char: Vocab

    def to_json(self) -> dict:
        return {k: getattr(self, k).to_json() for k in ("node", "edge", "token", "char")}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabs":
        return cls(**{k: Vocab.from_json(v) for k, v in obj.items()})


def build_vocabs(examples: Sequence[Example]) -> Vocabs:
    node_labels, edge_labels, tokens, chars = [], [], [], []
    for ex in examples:
        node_labels += ex.graph.labels[: ex.n]
        edge_labels += [e.label for e in ex.graph.original_edges()]
        tokens += ex.target or []
    for w in node_labels + tokens:
        chars += list(w)
    base = sorted(set(edge_labels))
    edges = base + [reverse_label(lab) for lab in base] + [SELF_LABEL, GLOBAL_LABEL, reverse_label(GLOBAL_LABEL)]
    return Vocabs(
        node=Vocab.build(node_labels),
        edge=Vocab(edges, specials=(), closed=True),
        token=Vocab.build(tokens, specials=(PAD, UNK, BOS, EOS)),
        char=Vocab.build(chars),
    )


@dataclass
class Batch:
    examples: list[Example]
    enc: EncoderInput
    selections: list[Selection]
    copy_map: np.ndarray  # [B, N, V_ext]
    ext_tokens: list[str]
    in_ids: np.ndarray | None = None  # [B, T]
    in_chars: list | None = None
    out_ids: np.ndarray | None = None  # [B, T]
    out_mask: np.ndarray | None = None  # [B, T]


def unk_replace(node_ids: np.ndarray, valid: np.ndarray, rate: float, rng: np.random.Generator,
                unk_id: int = 1) -> np.ndarray:
    """Replace each valid node label id by ``unk_id`` with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"unk rate must be in [0, 1], got {rate}")
    if rate == 0.0:
        return node_ids.copy()
    hit = (rng.random(node_ids.shape) < rate) & valid
    return np.where(hit, unk_id, node_ids)


@dataclass
class LossResult:
    loss: Tensor
    n_tokens: int
    n_correct: int
    n_clamped: int

    @property
    def accuracy(self) -> float:
        return self.n_correct / max(self.n_tokens, 1)


class Graph2Seq(Module):
    def __init__(self, config: ModelConfig, vocabs: Vocabs, seed: int = 0):
        rng = np.random.default_rng(seed)
        c = config
        self.config = config
        self.vocabs = vocabs
        self.encoder = GraphEncoder(rng, len(vocabs.node), len(vocabs.char), c.layers, c.d_model, c.heads, c.d_ff,
                                    c.node_dim, c.char_dim, c.char_filters, c.char_width, c.char_out)
        self.relations = RelationEncoder(rng, vocabs.edge, c.edge_dim, c.rel_hidden, c.d_model)
        self.decoder = SequenceDecoder(rng, vocabs.token, len(vocabs.char), c.layers, c.d_model, c.heads, c.d_ff,
                                       c.token_dim, c.char_dim, c.char_filters, c.char_width, c.char_out)
        self.decoder.char_vocab = vocabs.char

    # -- batching ----------------------------------------------------------
    def make_batch(self, examples: Sequence[Example], mode: str = "test", seed: int = 0,
                   unk_rate: float = 0.0, with_targets: bool = True) -> Batch:
        examples = list(examples)
        v = self.vocabs
        sizes = np.array([ex.n for ex in examples])
        n_pad = int(sizes.max()) + 1
        bsz = len(examples)
        node_ids = np.zeros((bsz, n_pad), dtype=np.int64)
        positions = np.zeros((bsz, n_pad), dtype=np.int64)
        char_ids = []
        for b, ex in enumerate(examples):
            labels = ex.graph.labels[: ex.n]
            node_ids[b, : ex.n] = v.node.ids(labels)
            for i in range(ex.n + 1):
                positions[b, i] = ex.positions[i]
            char_ids.append([v.char.ids(list(lab)) for lab in labels])
        if unk_rate > 0:
            rng = np.random.default_rng([seed, 1])
            node_ids = unk_replace(node_ids, np.arange(n_pad)[None, :] < sizes[:, None], unk_rate, rng,
                                   v.node.id(UNK))
        enc = EncoderInput(node_ids, char_ids, positions, sizes)
        selections = [select_paths(ex.paths, mode, seed=seed * 1_000_003 + b) if mode == "train"
                      else select_paths(ex.paths, "test") for b, ex in enumerate(examples)]

        ext: dict[str, int] = {}
        for ex in examples:
            for lab in ex.graph.labels[: ex.n]:
                if lab not in v.token and lab not in ext:
                    ext[lab] = len(v.token) + len(ext)
        v_ext = len(v.token) + len(ext)
        copy_map = np.zeros((bsz, n_pad, v_ext), dtype=np.float64)
        for b, ex in enumerate(examples):
            for i, lab in enumerate(ex.graph.labels[: ex.n]):
                copy_map[b, i, v.token.stoi.get(lab, ext.get(lab))] = 1.0
        batch = Batch(examples, enc, selections, copy_map, list(ext))
        if with_targets and all(ex.target is not None for ex in examples):
            self._add_targets(batch)
        return batch

    def _add_targets(self, batch: Batch) -> None:
        v = self.vocabs.token
        exs = batch.examples
        t = max(len(ex.target) for ex in exs) + 1
        bsz = len(exs)
        ext = {w: len(v) + k for k, w in enumerate(batch.ext_tokens)}
        in_ids = np.full((bsz, t), v.id(PAD), dtype=np.int64)
        out_ids = np.full((bsz, t), v.id(PAD), dtype=np.int64)
        mask = np.zeros((bsz, t), dtype=bool)
        in_chars = []
        for b, ex in enumerate(exs):
            labels = set(ex.graph.labels[: ex.n])
            gold = []
            for w in ex.target:
                if w in v:
                    gold.append(v.id(w))
                elif w in labels:
                    gold.append(ext[w])
                else:
                    gold.append(v.id(UNK))
            words_in = [BOS] + list(ex.target)
            in_ids[b, : len(gold) + 1] = [v.id(BOS)] + gold
            out_ids[b, : len(gold) + 1] = gold + [v.id(EOS)]
            mask[b, : len(gold) + 1] = True
            chars = [self.vocabs.char.ids(list(w)) for w in words_in]
            chars += [[self.vocabs.char.id(PAD)]] * (t - len(chars))
            in_chars.append(chars)
        batch.in_ids, batch.out_ids, batch.out_mask, batch.in_chars = in_ids, out_ids, mask, in_chars

    # -- forward -----------------------------------------------------------
    def relation_table(self, batch: Batch) -> RelationTable:
        return self.relations.encode_table(batch.selections, batch.enc.n_pad)

    def encode(self, batch: Batch, stream: DropoutStream | None = None) -> EncoderOutput:
        rel = self.relation_table(batch)
        return self.encoder(batch.enc, rel, self.config.dropout, stream)

    def forward(self, batch: Batch, stream: DropoutStream | None = None, force_gate: str | None = None):
        enc = self.encode(batch, stream)
        h = self.decoder(enc.states, enc.node_mask, enc.x_global, batch.in_ids, batch.in_chars,
                         self.config.dropout, stream)
        return self.decoder.copy_distribution(h, enc.states, enc.node_mask, batch.copy_map, force_gate)

    def loss(self, batch: Batch, stream: DropoutStream | None = None, force_gate: str | None = None) -> LossResult:
        """Mean negative log-likelihood of the gold tokens under the copy mixture."""
        if batch.out_ids is None:
            raise ValueError("batch has no targets")
        out = self.forward(batch, stream, force_gate)
        gold_p = ad.take_along_axis(out.probs, batch.out_ids[..., None], axis=-1)[..., 0]
        mask = batch.out_mask
        n_tok = int(mask.sum())
        nll = -ad.log(gold_p, floor=PROB_FLOOR)
        loss = (nll * mask.astype(nll.data.dtype)).sum() * (1.0 / max(n_tok, 1))
        pred = out.probs.data.argmax(-1)
        correct = int(((pred == batch.out_ids) & mask).sum())
        clamped = int(((gold_p.data < PROB_FLOOR) & mask).sum())
        return LossResult(loss, n_tok, correct, clamped)

    # -- generation --------------------------------------------------------
    def decode_context(self, example: Example) -> tuple[DecodeContext, EncoderOutput]:
        batch = self.make_batch([example], with_targets=False)
        with ad.no_grad():
            enc = self.encode(batch)
        ctx = DecodeContext(enc.states, enc.node_mask, enc.x_global, batch.copy_map, batch.ext_tokens)
        return ctx, enc

    def generate(self, example: Example, beam: int = 8, max_len: int = 50,
                 postprocess: Callable[[list[str]], list[str]] | None = None) -> Hypothesis:
        was_training = self.training
        self.eval()
        try:
            ctx, _ = self.decode_context(example)
            return beam_search(self.decoder, ctx, beam, max_len, postprocess=postprocess)
        finally:
            self.train(was_training)

    def greedy(self, example: Example, max_len: int = 50) -> Hypothesis:
        was_training = self.training
        self.eval()
        try:
            ctx, _ = self.decode_context(example)
            return greedy_decode(self.decoder, ctx, max_len)
        finally:
            self.train(was_training)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {state[name].shape} vs {p.shape}")
            p.data = np.array(state[name], dtype=p.data.dtype)
