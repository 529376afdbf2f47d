"""Shortest relation paths between every ordered node pair.

Paths are label sequences. Ordinary pairs are connected by BFS over the
original and reverse edges only: global edges would put every pair within
two hops and self-loops never shorten a path. Pairs touching the global
node get a single ``global`` / ``R_global`` label and ``(i, i)`` gets
``self``.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import GLOBAL_LABEL, SELF_LABEL, GraphError, LabeledGraph, reverse_label

Path = tuple[str, ...]

DEFAULT_CAP = 4
DEFAULT_MAX_LEN = 8


@dataclass(frozen=True)
class RelationPath:
    labels: Path
    src: int
    dst: int

    @property
    def length(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class PathTable:
    """All retained shortest paths for every ordered pair of one augmented graph.

    ``paths[i][j]`` is a tuple of label sequences sorted lexicographically;
    ``lengths[i, j]`` is the hop count before any truncation.
    """
    n: int
    paths: tuple[tuple[tuple[Path, ...], ...], ...]
    lengths: np.ndarray

    def __getitem__(self, pair: tuple[int, int]) -> tuple[Path, ...]:
        i, j = pair
        return self.paths[i][j]

    def pairs(self):
        for i in range(self.n):
            for j in range(self.n):
                yield i, j

    def to_jsonl(self) -> str:
        return "\n".join(
            json.dumps({"src": i, "dst": j, "paths": [list(p) for p in self.paths[i][j]]})
            for i, j in self.pairs()
        )


def _truncate(path: Path, max_len: int | None) -> Path:
    if max_len is not None and len(path) > max_len:
        return path[-max_len:]
    return path


def all_shortest_paths(g: LabeledGraph, cap: int = DEFAULT_CAP,
                       max_len: int | None = DEFAULT_MAX_LEN) -> PathTable:
    """Enumerate shortest label paths for all ordered pairs of an augmented graph.

    At most ``cap`` distinct label sequences are kept per pair, the
    lexicographically smallest ones. Keeping the ``cap`` smallest prefixes
    at every relay node is exact because sequences of equal length compare
    prefix-first.
    """
    if not g.augmented:
        raise GraphError("all_shortest_paths expects an augmented graph")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    n = g.n
    gid = g.global_id
    m = g.n_original
    in_edges: list[list[tuple[int, str]]] = [[] for _ in range(m)]
    out_adj: list[list[int]] = [[] for _ in range(m)]
    for e in g.edges:
        if e.label in (GLOBAL_LABEL, SELF_LABEL) or e.src == e.dst:
            continue
        in_edges[e.dst].append((e.src, e.label))
        out_adj[e.src].append(e.dst)

    paths: list[list[tuple[Path, ...]]] = [[() for _ in range(n)] for _ in range(n)]
    lengths = np.zeros((n, n), dtype=np.int64)
    for s in range(m):
        dist = [-1] * m
        dist[s] = 0
        order = [s]
        q = deque([s])
        while q:
            u = q.popleft()
            for v in out_adj[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    order.append(v)
                    q.append(v)
        if min(dist) < 0:
            raise GraphError(f"node {dist.index(-1)} is unreachable from node {s}")
        found: list[list[Path]] = [[] for _ in range(m)]
        found[s] = [()]
        for v in order[1:]:
            cands = set()
            for u, lab in in_edges[v]:
                if dist[u] == dist[v] - 1:
                    cands.update(p + (lab,) for p in found[u])
            found[v] = sorted(cands)[:cap]
        for t in range(m):
            lengths[s, t] = max(dist[t], 1)
            if t == s:
                paths[s][t] = ((SELF_LABEL,),)
            else:
                paths[s][t] = tuple(dict.fromkeys(_truncate(p, max_len) for p in found[t]))
    for v in range(m):
        paths[gid][v] = ((GLOBAL_LABEL,),)
        paths[v][gid] = ((reverse_label(GLOBAL_LABEL),),)
        lengths[gid, v] = lengths[v, gid] = 1
    paths[gid][gid] = ((SELF_LABEL,),)
    lengths[gid, gid] = 1
    return PathTable(n, tuple(tuple(row) for row in paths), lengths)


@dataclass(frozen=True)
class Selection:
    """Per-pair choice: a tuple of paths with averaging weights.

    In train mode every pair holds exactly one path with weight 1.
    """
    n: int
    chosen: tuple[tuple[tuple[Path, ...], ...], ...]
    mode: str

    def __getitem__(self, pair):
        i, j = pair
        return self.chosen[i][j]

    def weights(self, i: int, j: int) -> list[float]:
        k = len(self.chosen[i][j])
        return [1.0 / k] * k


def select_paths(table: PathTable, mode: str = "test", seed: int = 0) -> Selection:
    """Pick one path per pair uniformly at random (train) or keep all for averaging (test)."""
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    if mode == "test":
        return Selection(table.n, table.paths, mode)
    rng = np.random.default_rng(seed)
    chosen = []
    for i in range(table.n):
        row = []
        for j in range(table.n):
            options = table.paths[i][j]
            k = 0 if len(options) == 1 else int(rng.integers(len(options)))
            row.append((options[k],))
        chosen.append(tuple(row))
    return Selection(table.n, tuple(chosen), mode)


@dataclass(frozen=True)
class DedupResult:
    unique_paths: list[Path]
    # index[b][i][j] -> tuple of indices into unique_paths
    index: list[list[list[tuple[int, ...]]]]

    def resolve(self, b: int, i: int, j: int) -> tuple[Path, ...]:
        return tuple(self.unique_paths[k] for k in self.index[b][i][j])


def dedup_paths(selections: Sequence[Selection]) -> DedupResult:
    """Collect every distinct label sequence in a batch once, in first-seen order."""
    if not selections:
        raise ValueError("dedup_paths needs a non-empty batch")
    ids: dict[Path, int] = {}
    index = []
    for sel in selections:
        rows = []
        for i in range(sel.n):
            row = []
            for j in range(sel.n):
                row.append(tuple(ids.setdefault(p, len(ids)) for p in sel[i, j]))
            rows.append(row)
        index.append(rows)
    return DedupResult(list(ids), index)
