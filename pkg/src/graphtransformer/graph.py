"""Labeled graph data model, input parsers and structural augmentation.

Graphs come in two flavours: ``"amr"`` graphs parsed from PENMAN text and
``"dep"`` dependency trees parsed from CoNLL-U. Both are stored as a
:class:`LabeledGraph`, a directed multigraph with string labels on nodes
and edges and a designated root.
"""
from __future__ import annotations

import re
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator

REVERSE_PREFIX = "R_"
SELF_LABEL = "self"
GLOBAL_LABEL = "global"
GLOBAL_NODE_LABEL = "<global>"


class GraphError(ValueError):
    """Raised for structurally invalid graphs."""


class PenmanSyntaxError(GraphError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class PenmanSemanticError(GraphError):
    pass


class ConlluFormatError(GraphError):
    pass


@dataclass(frozen=True)
class NodeRecord:
    id: int
    label: str
    index: int | None = None  # surface token position, dependency graphs only

    def __post_init__(self):
        if not self.label:
            raise GraphError(f"node {self.id} has an empty label")

    @property
    def char_seq(self) -> tuple[str, ...]:
        return tuple(self.label)


@dataclass(frozen=True)
class EdgeRecord:
    src: int
    dst: int
    label: str

    def __post_init__(self):
        if not self.label:
            raise GraphError(f"edge {self.src}->{self.dst} has an empty label")
        if self.label.startswith(REVERSE_PREFIX + REVERSE_PREFIX):
            raise GraphError(f"label {self.label!r} carries the reverse prefix twice")

    def as_tuple(self) -> tuple[int, int, str]:
        return (self.src, self.dst, self.label)


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    nodes: tuple[NodeRecord, ...]
    edges: tuple[EdgeRecord, ...]
    root: int
    augmented: bool = False
    mode: str = "amr"
    variables: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        n = len(self.nodes)
        for i, node in enumerate(self.nodes):
            if node.id != i:
                raise GraphError(f"node ids must be dense 0..n-1, got {node.id} at {i}")
        if not 0 <= self.root < n:
            raise GraphError(f"root {self.root} is not a valid node id")
        seen = set()
        for e in self.edges:
            if not (0 <= e.src < n and 0 <= e.dst < n):
                raise GraphError(f"edge {e.as_tuple()} has an invalid endpoint")
            if e.as_tuple() in seen:
                raise GraphError(f"duplicate edge {e.as_tuple()}")
            seen.add(e.as_tuple())
        if self.mode not in ("amr", "dep"):
            raise GraphError(f"unknown graph mode {self.mode!r}")

    def __eq__(self, other):
        if not isinstance(other, LabeledGraph):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and sorted(e.as_tuple() for e in self.edges) == sorted(e.as_tuple() for e in other.edges)
            and self.root == other.root
            and self.augmented == other.augmented
            and self.mode == other.mode
        )

    __hash__ = None

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def labels(self) -> list[str]:
        return [node.label for node in self.nodes]

    @property
    def global_id(self) -> int | None:
        return self.n - 1 if self.augmented else None

    @property
    def n_original(self) -> int:
        return self.n - 1 if self.augmented else self.n

    def original_edges(self) -> list[EdgeRecord]:
        if not self.augmented:
            return list(self.edges)
        return [e for e in self.edges if is_original_label(e.label)]

    def in_degrees(self) -> list[int]:
        deg = [0] * self.n
        for e in self.original_edges():
            deg[e.dst] += 1
        return deg

    def permute(self, perm: list[int]) -> "LabeledGraph":
        """Relabel node ``i`` as ``perm[i]``. For augmented graphs the global node must stay last."""
        if sorted(perm) != list(range(self.n)):
            raise GraphError("perm must be a permutation of node ids")
        if self.augmented and perm[self.n - 1] != self.n - 1:
            raise GraphError("the global node must keep the last id")
        inv = [0] * self.n
        for old, new in enumerate(perm):
            inv[new] = old
        nodes = tuple(
            NodeRecord(new, self.nodes[inv[new]].label, self.nodes[inv[new]].index) for new in range(self.n)
        )
        edges = tuple(EdgeRecord(perm[e.src], perm[e.dst], e.label) for e in self.edges)
        variables = None
        if self.variables is not None:
            variables = tuple(self.variables[inv[new]] for new in range(self.n))
        return LabeledGraph(nodes, edges, perm[self.root], self.augmented, self.mode, variables)


def is_original_label(label: str) -> bool:
    return not (label.startswith(REVERSE_PREFIX) or label in (SELF_LABEL, GLOBAL_LABEL))


def reverse_label(label: str) -> str:
    """Toggle the reverse prefix."""
    if label.startswith(REVERSE_PREFIX):
        return label[len(REVERSE_PREFIX):]
    return REVERSE_PREFIX + label


def make_graph(labels: Iterable[str], edges: Iterable[tuple[int, int, str]], root: int = 0,
               mode: str = "amr") -> LabeledGraph:
    nodes = tuple(NodeRecord(i, lab, i + 1 if mode == "dep" else None) for i, lab in enumerate(labels))
    return LabeledGraph(nodes, tuple(EdgeRecord(*e) for e in edges), root, mode=mode)


# ---------------------------------------------------------------------------
# PENMAN

_PENMAN_TOKEN = re.compile(
    r"""\s*(?:
        (?P<lparen>\()
      | (?P<rparen>\))
      | (?P<slash>/)
      | (?P<role>:[^\s()":]*)
      | (?P<string>"(?:[^"\\]|\\.)*")
      | (?P<symbol>[^\s()/:"]+)
    )""",
    re.VERBOSE,
)
_VARIABLE = re.compile(r"^[a-z][a-z]?\d*$")
_NON_INVERTED_OF = {"consist-of", "prep-out-of", "prep-on-behalf-of"}


def _tokenize_penman(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _PENMAN_TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise PenmanSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return tokens


def parse_penman(text: str) -> LabeledGraph:
    """Parse one PENMAN s-expression into an unaugmented AMR graph.

    Variables that are re-used produce reentrant edges. Roles ending in
    ``-of`` are inverted. Bare atoms that look like variables (one or two
    lowercase letters plus optional digits) must resolve to a defined
    variable; other atoms become constant nodes.

    >>> g = parse_penman("(w / want-01 :ARG0 (b / boy))")
    >>> g.labels, [e.as_tuple() for e in g.edges]
    (['want-01', 'boy'], [(0, 1, 'ARG0')])
    """
    text = "\n".join(line for line in text.splitlines() if not line.lstrip().startswith("#"))
    tokens = _tokenize_penman(text)
    if not tokens:
        raise PenmanSyntaxError("empty input", 0)

    labels: list[str] = []
    var_names: list[str] = []
    var_ids: dict[str, int] = {}
    # (src, role, target) where target is an int node id or ("ref", name, offset)
    raw_edges: list[tuple[int, str, object]] = []
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, None, len(text))

    def expect(kind):
        nonlocal pos
        tok = peek()
        if tok[0] != kind:
            found = "end of input" if tok[0] is None else repr(tok[1])
            raise PenmanSyntaxError(f"expected {kind}, found {found}", tok[2])
        pos += 1
        return tok

    def new_node(label, var):
        labels.append(label)
        var_names.append(var)
        return len(labels) - 1

    def parse_node():
        nonlocal pos
        expect("lparen")
        _, var, off = expect("symbol")
        if var in var_ids:
            raise PenmanSemanticError(f"variable {var!r} defined twice (offset {off})")
        expect("slash")
        kind, concept, coff = peek()
        if kind not in ("symbol", "string"):
            raise PenmanSyntaxError("expected concept", coff)
        pos += 1
        nid = new_node(concept.strip('"'), var)
        var_ids[var] = nid
        while peek()[0] == "role":
            _, role, roff = expect("role")
            role = role[1:]
            if not role:
                raise PenmanSyntaxError("empty role", roff)
            kind, value, voff = peek()
            if kind == "lparen":
                target = parse_node()
            elif kind == "string":
                pos += 1
                target = new_node(value[1:-1] or value, f"_c{len(labels)}")
            elif kind == "symbol":
                pos += 1
                target = ("ref", value, voff)
            else:
                found = "end of input" if kind is None else repr(value)
                raise PenmanSyntaxError(f"expected role value, found {found}", voff)
            raw_edges.append((nid, role, target))
        expect("rparen")
        return nid

    root = parse_node()
    if pos != len(tokens):
        kind, value, off = tokens[pos]
        if kind == "rparen":
            raise PenmanSyntaxError("unbalanced ')'", off)
        raise PenmanSyntaxError(f"trailing content {value!r}", off)

    edges: list[EdgeRecord] = []
    for src, role, target in raw_edges:
        if isinstance(target, tuple):
            _, name, off = target
            if name in var_ids:
                target = var_ids[name]
                if target == src:
                    raise PenmanSemanticError(
                        f"variable {name!r} refers to itself (offset {off}); self-reference is not a valid relation"
                    )
            elif _VARIABLE.match(name):
                raise PenmanSemanticError(f"undefined variable {name!r} (offset {off})")
            else:
                target = new_node(name, f"_c{len(labels)}")
        if role.endswith("-of") and role not in _NON_INVERTED_OF:
            src, target, role = target, src, role[:-3]
        edge = EdgeRecord(src, target, role)
        if edge in edges:
            raise GraphError(f"duplicate edge {edge.as_tuple()}")
        edges.append(edge)

    nodes = tuple(NodeRecord(i, lab) for i, lab in enumerate(labels))
    return LabeledGraph(nodes, tuple(edges), root, False, "amr", tuple(var_names))


def render_penman(g: LabeledGraph) -> str:
    """Serialize an unaugmented graph back to a single-line PENMAN string.

    Nodes are defined in depth-first order from the root; edges that point
    back towards an already-visited node are written with ``-of`` roles.
    Variables default to ``v<id>`` when the graph carries none.
    """
    if g.augmented:
        raise GraphError("render_penman expects an unaugmented graph")
    variables = g.variables or tuple(f"v{i}" for i in range(g.n))
    incident: list[list[tuple[int, EdgeRecord]]] = [[] for _ in range(g.n)]
    for k, e in enumerate(g.edges):
        incident[e.src].append((k, e))
        if e.dst != e.src:
            incident[e.dst].append((k, e))
    for lst in incident:
        lst.sort(key=lambda item: item[0])

    visited = [False] * g.n
    used = [False] * len(g.edges)

    def concept(label: str) -> str:
        if re.fullmatch(r'[^\s()/:"]+', label) and not _VARIABLE.match(label):
            return label
        return '"' + label.replace('"', '\\"') + '"'

    def emit(i: int) -> str:
        visited[i] = True
        parts = [f"({variables[i]} / {concept(g.nodes[i].label)}"]
        for k, e in incident[i]:
            if used[k]:
                continue
            used[k] = True
            if e.src == i:
                role, other = e.label, e.dst
            else:
                role, other = e.label + "-of", e.src
            if visited[other]:
                parts.append(f":{role} {variables[other]}")
            else:
                parts.append(f":{role} {emit(other)}")
        return " ".join(parts) + ")"

    out = emit(g.root)
    if not all(visited):
        raise GraphError("graph is not connected from its root")
    return out


def read_penman_blocks(text: str) -> Iterator[tuple[LabeledGraph | Exception, str | None, int]]:
    """Yield ``(graph_or_error, reference_sentence, line_number)`` per blank-line separated block.

    A reference sentence is taken from a ``# ::snt`` comment line.
    """
    block: list[str] = []
    start = 1
    for lineno, line in enumerate(text.splitlines() + [""], start=1):
        if line.strip():
            if not block:
                start = lineno
            block.append(line)
            continue
        if not block:
            continue
        snt = None
        body = []
        for b in block:
            s = b.strip()
            if s.startswith("# ::snt"):
                snt = s[len("# ::snt"):].strip()
            elif not s.startswith("#"):
                body.append(b)
        block = []
        if not body:
            continue
        try:
            yield parse_penman("\n".join(body)), snt, start
        except GraphError as exc:
            yield exc, snt, start


# ---------------------------------------------------------------------------
# CoNLL-U

def parse_conllu(text: str) -> LabeledGraph:
    """Parse one CoNLL-U sentence block into a dependency graph.

    Multiword-token ranges (``1-2``) and empty nodes (``1.1``) are skipped.
    """
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t") if "\t" in line else line.split()
        if len(cols) < 4:
            raise ConlluFormatError(f"too few columns in line {line!r}")
        if "-" in cols[0] or "." in cols[0]:
            continue
        if len(cols) >= 8:
            tid, form, head, rel = cols[0], cols[1], cols[6], cols[7]
        else:
            tid, form, head, rel = cols[0], cols[1], cols[2], cols[3]
        try:
            rows.append((int(tid), form, int(head), rel))
        except ValueError as exc:
            raise ConlluFormatError(f"non-integer ID/HEAD in line {line!r}") from exc
    if not rows:
        raise ConlluFormatError("empty sentence block")
    n = len(rows)
    if [r[0] for r in rows] != list(range(1, n + 1)):
        raise ConlluFormatError("token IDs must run 1..n")
    roots = [r[0] for r in rows if r[2] == 0]
    if len(roots) != 1:
        raise ConlluFormatError(f"expected exactly one root, found {len(roots)}")
    heads = {r[0]: r[2] for r in rows}
    for tid, _, head, _ in rows:
        if not 0 <= head <= n:
            raise ConlluFormatError(f"token {tid} has out-of-range HEAD {head}")
    for tid in heads:
        seen = set()
        cur = tid
        while cur != 0:
            if cur in seen:
                raise ConlluFormatError(f"cyclic HEAD chain through token {cur}")
            seen.add(cur)
            cur = heads[cur]
    nodes = tuple(NodeRecord(tid - 1, form, tid) for tid, form, _, _ in rows)
    edges = tuple(EdgeRecord(head - 1, tid - 1, rel) for tid, _, head, rel in rows if head != 0)
    return LabeledGraph(nodes, edges, roots[0] - 1, False, "dep")


_TARGET_COMMENT = re.compile(r"#\s*target\s*=(.*)")


def read_conllu_blocks(text: str) -> Iterator[tuple[LabeledGraph | Exception, str | None, int]]:
    """Yield ``(tree_or_error, target_sentence, line_number)``; the target comes from ``# target = ...``."""
    block: list[str] = []
    start = 1
    for lineno, line in enumerate(text.splitlines() + [""], start=1):
        if line.strip():
            if not block:
                start = lineno
            block.append(line)
            continue
        if not block:
            continue
        cur, block = block, []
        if all(b.lstrip().startswith("#") for b in cur):
            continue
        target = None
        for b in cur:
            m = _TARGET_COMMENT.match(b.strip())
            if m:
                target = m.group(1).strip()
        try:
            yield parse_conllu("\n".join(cur)), target, start
        except GraphError as exc:
            yield exc, target, start


# ---------------------------------------------------------------------------
# augmentation, positions, statistics

def augment(g: LabeledGraph) -> LabeledGraph:
    """Add reverse edges, self-loops and a global node (id ``n``).

    For ``n`` nodes and ``m`` edges the result has ``2m + (n + 1) + n`` edges.
    """
    if g.augmented:
        raise GraphError("graph is already augmented")
    for e in g.edges:
        if not is_original_label(e.label):
            raise GraphError(f"edge label {e.label!r} is reserved for augmentation")
    n = g.n
    edges = list(g.edges)
    edges += [EdgeRecord(e.dst, e.src, reverse_label(e.label)) for e in g.edges]
    edges += [EdgeRecord(i, i, SELF_LABEL) for i in range(n + 1)]
    edges += [EdgeRecord(n, i, GLOBAL_LABEL) for i in range(n)]
    nodes = g.nodes + (NodeRecord(n, GLOBAL_NODE_LABEL, 0 if g.mode == "dep" else None),)
    variables = None if g.variables is None else g.variables + ("_global",)
    return LabeledGraph(nodes, tuple(edges), g.root, True, g.mode, variables)


def strip_augmentation(g: LabeledGraph) -> LabeledGraph:
    if not g.augmented:
        raise GraphError("graph is not augmented")
    n = g.n - 1
    edges = tuple(e for e in g.edges if is_original_label(e.label))
    variables = None if g.variables is None else g.variables[:n]
    return LabeledGraph(g.nodes[:n], edges, g.root, False, g.mode, variables)


def _bfs(n: int, adj: list[list[int]], start: int) -> list[int]:
    dist = [-1] * n
    dist[start] = 0
    q = deque([start])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def absolute_positions(g: LabeledGraph) -> dict[int, int]:
    """Structural position of every node, the global node included (position 0).

    AMR graphs use the hop count from the root along original edges.
    Nodes not reachable along directed edges fall back to undirected hops.
    Dependency graphs use the surface token index.
    """
    if not g.augmented:
        raise GraphError("absolute_positions expects an augmented graph")
    n = g.n_original
    if g.mode == "dep":
        pos = {i: g.nodes[i].index if g.nodes[i].index is not None else i + 1 for i in range(n)}
    else:
        directed: list[list[int]] = [[] for _ in range(n)]
        undirected: list[list[int]] = [[] for _ in range(n)]
        for e in g.original_edges():
            directed[e.src].append(e.dst)
            undirected[e.src].append(e.dst)
            undirected[e.dst].append(e.src)
        d_dir = _bfs(n, directed, g.root)
        d_und = _bfs(n, undirected, g.root)
        pos = {i: (d_dir[i] if d_dir[i] >= 0 else max(d_und[i], 0)) for i in range(n)}
    pos[g.global_id] = 0
    return pos


@dataclass(frozen=True)
class GraphStats:
    size: int
    diameter: int
    reentrancies: int
    disconnected: bool = False

    def as_dict(self) -> dict:
        return {"size": self.size, "diameter": self.diameter, "reentrancies": self.reentrancies,
                "disconnected": self.disconnected}


def undirected_distances(g: LabeledGraph) -> list[list[int]]:
    """All-pairs hop counts over the undirected view of the original edges (-1 if unreachable)."""
    n = g.n_original
    adj: list[list[int]] = [[] for _ in range(n)]
    for e in g.original_edges():
        adj[e.src].append(e.dst)
        adj[e.dst].append(e.src)
    return [_bfs(n, adj, i) for i in range(n)]


def graph_stats(g: LabeledGraph) -> GraphStats:
    if g.augmented:
        g = strip_augmentation(g)
    dist = undirected_distances(g)
    comps: list[set[int]] = []
    assigned = set()
    for i in range(g.n):
        if i not in assigned:
            comp = {j for j, d in enumerate(dist[i]) if d >= 0}
            assigned |= comp
            comps.append(comp)
    disconnected = len(comps) > 1
    if disconnected:
        warnings.warn("graph is disconnected; diameter computed on the largest component", stacklevel=2)
    largest = max(comps, key=len)
    diameter = max((dist[i][j] for i in largest for j in largest), default=0)
    reentrancies = sum(1 for d in g.in_degrees() if d >= 2)
    return GraphStats(g.n, diameter, reentrancies, disconnected)


# ---------------------------------------------------------------------------
# JSON

def graph_to_json(g: LabeledGraph) -> dict:
    out = {
        "nodes": [{"id": nd.id, "label": nd.label} | ({"index": nd.index} if nd.index is not None else {})
                  for nd in g.nodes],
        "edges": [[e.src, e.dst, e.label] for e in g.edges],
        "root": g.root,
        "augmented": g.augmented,
        "mode": g.mode,
    }
    if g.variables is not None:
        out["variables"] = list(g.variables)
    return out


def graph_from_json(obj: dict) -> LabeledGraph:
    nodes = tuple(NodeRecord(nd["id"], nd["label"], nd.get("index")) for nd in obj["nodes"])
    edges = tuple(EdgeRecord(int(s), int(d), lab) for s, d, lab in obj["edges"])
    variables = tuple(obj["variables"]) if obj.get("variables") is not None else None
    return LabeledGraph(nodes, edges, obj["root"], obj.get("augmented", False), obj.get("mode", "amr"), variables)
