"""Score breakdowns by graph property and the attention-distance probe."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .graph import GraphStats

KEYS = ("size", "diameter", "reentrancies")


@dataclass
class BinnedReport:
    key: str
    edges: list[float]  # inner boundaries; bin k holds values in (edges[k-1], edges[k]]
    counts: list[int]
    scores: list[float | None]
    labels: list[str]

    @property
    def total(self) -> int:
        return sum(self.counts)

    def overall(self) -> float:
        """Count-weighted mean of the bin scores, i.e. the corpus macro average."""
        num = sum(c * s for c, s in zip(self.counts, self.scores) if c)
        return num / self.total

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin", "count", "score"])
        for lab, c, s in zip(self.labels, self.counts, self.scores):
            w.writerow([lab, c, "" if s is None else f"{s:.4f}"])
        return buf.getvalue()


def _bin_labels(edges: Sequence[float]) -> list[str]:
    fmt = lambda x: f"{x:g}"
    out = [f"<={fmt(edges[0])}"]
    out += [f"({fmt(a)},{fmt(b)}]" for a, b in zip(edges, edges[1:])]
    out.append(f">{fmt(edges[-1])}")
    return out


def binned_report(scores: Sequence[float], stats: Sequence[GraphStats], key: str = "size",
                  edges: Sequence[float] | None = None) -> BinnedReport:
    """Macro-average per-sentence scores within four bins of a graph property.

    ``edges`` are the three inner boundaries; by default the 25/50/75
    percentiles of the property over this corpus.
    """
    if key == "reentrancy":
        key = "reentrancies"
    if key not in KEYS:
        raise ValueError(f"unknown binning key {key!r}; expected one of {KEYS}")
    if len(scores) != len(stats):
        raise ValueError("one score per graph is required")
    if len(scores) == 0:
        raise ValueError("empty corpus")
    values = np.array([getattr(s, key) for s in stats], dtype=float)
    if edges is None:
        edges = np.percentile(values, [25, 50, 75]).tolist()
    edges = [float(e) for e in edges]
    if len(edges) != 3 or sorted(edges) != edges:
        raise ValueError("expected three non-decreasing bin edges")
    which = np.searchsorted(edges, values, side="left")
    sc = np.asarray(scores, dtype=float)
    counts, means = [], []
    for k in range(4):
        sel = which == k
        counts.append(int(sel.sum()))
        means.append(float(sc[sel].mean()) if sel.any() else None)
    return BinnedReport(key, edges, counts, means, _bin_labels(edges))


@dataclass
class AttentionDistance:
    layer: int
    head: int
    avg_distance: float
    n_queries: int


def argmax_keys(weights: np.ndarray, valid: int) -> np.ndarray:
    """Per-query argmax over the first ``valid`` keys; ties go to the lowest id."""
    return np.argmax(weights[:valid, :valid], axis=-1)


def attention_distance(attentions: Sequence[Sequence[np.ndarray]], path_lengths: Sequence[np.ndarray],
                       sizes: Sequence[int]) -> list[AttentionDistance]:
    """Average hop distance from each query node to its most-attended node.

    ``attentions[g][l]`` is the ``[H, N, N]`` attention of graph ``g`` at
    layer ``l`` (the last row/column of the valid block may be the global
    node, which is ignored); ``path_lengths[g]`` holds the shortest-path hop
    counts of graph ``g`` and ``sizes[g]`` its number of original nodes.
    Queries attending hardest to themselves count as distance 0.
    """
    if not attentions:
        raise ValueError("no graphs given")
    n_layers = len(attentions[0])
    n_heads = attentions[0][0].shape[0]
    sums = np.zeros((n_layers, n_heads))
    count = 0
    for att, lengths, n in zip(attentions, path_lengths, sizes):
        dist = np.array(lengths[:n, :n], dtype=float)
        np.fill_diagonal(dist, 0.0)
        for layer, w in enumerate(att):
            w = np.asarray(w)
            for h in range(n_heads):
                j = argmax_keys(w[h], n)
                sums[layer, h] += dist[np.arange(n), j].sum()
        count += n
    return [AttentionDistance(layer, h, float(sums[layer, h] / count), count)
            for layer in range(n_layers) for h in range(n_heads)]


def attention_distance_csv(rows: Sequence[AttentionDistance]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer", "head", "avg_distance"])
    for r in rows:
        w.writerow([r.layer, r.head, f"{r.avg_distance:.6f}"])
    return buf.getvalue()


def model_attention_distance(model, examples, batch_size: int = 16) -> list[AttentionDistance]:
    """Run the encoder (eval mode) over ``examples`` and probe its attention."""
    from . import autodiff as ad

    was = model.training
    model.eval()
    atts, lengths, sizes = [], [], []
    with ad.no_grad():
        for k in range(0, len(examples), batch_size):
            chunk = examples[k:k + batch_size]
            out = model.encode(model.make_batch(chunk, with_targets=False))
            for b, ex in enumerate(chunk):
                atts.append([a.data[b] for a in out.attentions])
                lengths.append(ex.paths.lengths)
                sizes.append(ex.n)
    model.train(was)
    return attention_distance(atts, lengths, sizes)

