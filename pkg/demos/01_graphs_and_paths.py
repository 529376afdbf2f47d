"""Graphs, augmentation and relation paths.

Run with ``python demos/01_graphs_and_paths.py``.
"""
# %% Parse an AMR written in PENMAN notation
from graphtransformer.graph import augment, graph_stats, parse_penman, render_penman
from graphtransformer.relpath import all_shortest_paths, select_paths

amr = """
(w / want-01
   :ARG0 (b / boy)
   :ARG1 (b2 / believe-01
            :ARG0 (g / girl)
            :ARG1 b))
"""
g = parse_penman(amr)
print("nodes:", g.labels)
for e in g.edges:
    print(f"  {g.labels[e.src]} -{e.label}-> {g.labels[e.dst]}")

# "b" is used twice, so boy has two parents: one reentrancy
print(graph_stats(g))
print(render_penman(g))

# %% Augment: reverse edges, self-loops and a global node
a = augment(g)
print(f"{a.n} nodes, {len(a.edges)} edges (2m + (n+1) + n = {2 * 4 + 5 + 4})")
print("global node id:", a.global_id, repr(a.labels[a.global_id]))

# %% Shortest relation paths between every pair of nodes
table = all_shortest_paths(a)
for i, j in [(0, 3), (3, 0), (1, 3), (2, 2), (4, 1)]:
    print(f"{a.labels[i]:>10} -> {a.labels[j]:<10} {[list(p) for p in table[i, j]]}")

# %% At training time a single path is sampled per pair; at test time all are averaged
two_routes = parse_penman("(a / and :op1 (x / x-1 :ARG0 (z / zed)) :op2 (y / y-1 :ARG1 z))")
t2 = all_shortest_paths(augment(two_routes))
print("test :", select_paths(t2, "test")[0, 2])
for seed in range(3):
    print("train:", select_paths(t2, "train", seed=seed)[0, 2])
