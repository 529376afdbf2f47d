"""Shared fixtures: random graphs, tiny model configs, the running-example AMR."""
import numpy as np

from graphtransformer.graph import make_graph, parse_penman
from graphtransformer.model import Graph2Seq, ModelConfig, build_vocabs, make_example

FIG1_AMR = """(w / want-01
   :ARG0 (b / boy)
   :ARG1 (b2 / believe-01
            :ARG0 (g / girl)
            :ARG1 b))"""

FIG1_SNT = "the boy wants the girl to believe him"

TINY = dict(layers=1, d_model=16, heads=2, d_ff=24, node_dim=8, edge_dim=6, token_dim=8, char_dim=4,
            char_filters=6, char_width=3, char_out=5, rel_hidden=4, dropout=0.0)

ACCEPTANCE_RESULTS: list[str] = []


def report(number: int, name: str, passed: bool, detail: str = "") -> bool:
    """Record one acceptance line and echo it; returns ``passed`` for use in an assert."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    return passed


CONCEPTS = ["want-01", "boy", "girl", "believe-01", "eat-01", "apple", "big", "dog", "see-01", "city", "name", "and"]
ROLES = ["ARG0", "ARG1", "ARG2", "mod", "location", "op1", "time"]


def random_graph(rng: np.random.Generator, n_max: int = 12, n_min: int = 1, extra: float = 0.3):
    """Connected random graph: random spanning tree with random orientations plus extra edges."""
    n = int(rng.integers(n_min, n_max + 1))
    labels = [str(rng.choice(CONCEPTS)) for _ in range(n)]
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        lab = str(rng.choice(ROLES))
        edges.add((u, v, lab) if rng.random() < 0.7 else (v, u, lab))
    for _ in range(int(extra * n)):
        u, v = (int(x) for x in rng.integers(0, n, size=2))
        if u != v:
            edges.add((u, v, str(rng.choice(ROLES))))
    return make_graph(labels, sorted(edges), root=0)


def fig1_graph():
    return parse_penman(FIG1_AMR)


def tiny_model(examples, seed=0, **over):
    cfg = ModelConfig(**{**TINY, **over})
    return Graph2Seq(cfg, build_vocabs(examples), seed=seed)


def toy_examples(n=6, seed=0):
    from graphtransformer.toydata import toy_corpus

    return [make_example(g, s) for g, s in toy_corpus(n, seed)]


# ---------------------------------------------------------------------------
# gradient-check cases: name -> (function, input arrays); inputs are float64

def _weighted(out, seed=99):
    from graphtransformer import autodiff as ad

    w = np.random.default_rng(seed).normal(size=out.shape)
    return ad.tsum(out * ad.Tensor(w))


def primitive_cases():
    from graphtransformer import autodiff as ad

    r = np.random.default_rng(0)
    n = lambda *s: r.normal(size=s)
    away_from_zero = lambda *s: np.sign(n(*s)) * (0.2 + r.random(s))
    ids = r.integers(0, 5, size=(3, 4))
    gru = {name: n(*shape) * 0.5 for name, shape in
           zip(ad.GRU_PARAM_NAMES, [(4, 3), (3, 3), (3,)] * 3)}
    gru_names = list(gru)
    mask = r.random((3, 4)) < 0.3
    keep_stream = lambda: ad.DropoutStream(5, 1)
    return {
        "add": (lambda a, b: _weighted(a + b), [n(3, 4), n(4)]),
        "sub": (lambda a, b: _weighted(a - b), [n(3, 1), n(3, 4)]),
        "mul": (lambda a, b: _weighted(a * b), [n(2, 3, 4), n(3, 1)]),
        "div": (lambda a, b: _weighted(a / b), [n(3, 4), away_from_zero(3, 4) + 2 * np.sign(n(3, 4))]),
        "exp": (lambda a: _weighted(ad.exp(a)), [n(3, 4)]),
        "log": (lambda a: _weighted(ad.log(a)), [0.5 + r.random((3, 4))]),
        "sigmoid": (lambda a: _weighted(ad.sigmoid(a)), [n(3, 4)]),
        "tanh": (lambda a: _weighted(ad.tanh(a)), [n(3, 4)]),
        "relu": (lambda a: _weighted(ad.relu(a)), [away_from_zero(3, 4)]),
        "matmul": (lambda a, b: _weighted(a @ b), [n(2, 3, 4), n(4, 5)]),
        "matmul_batched": (lambda a, b: _weighted(ad.matmul(a, b)), [n(2, 2, 3, 4), n(2, 1, 4, 3)]),
        "sum": (lambda a: _weighted(ad.tsum(a, axis=1, keepdims=True)), [n(3, 4, 2)]),
        "mean": (lambda a: _weighted(ad.mean(a, axis=(0, 2))), [n(3, 4, 2)]),
        "reshape": (lambda a: _weighted(a.reshape(4, 6)), [n(2, 3, 4)]),
        "transpose": (lambda a: _weighted(a.transpose(2, 0, 1)), [n(2, 3, 4)]),
        "getitem": (lambda a: _weighted(a[np.array([0, 2, 0]), 1:]), [n(3, 4)]),
        "concat": (lambda a, b: _weighted(ad.concat([a, b, a], axis=1)), [n(2, 3), n(2, 2)]),
        "split": (lambda a: _weighted(ad.split(a, [1, 3], axis=-1)[1]) + _weighted(ad.split(a, [1, 3], -1)[0], 3),
                  [n(2, 4)]),
        "stack": (lambda a, b: _weighted(ad.stack([a, b], axis=1)), [n(2, 3), n(2, 3)]),
        "embedding_lookup": (lambda t: _weighted(ad.embedding_lookup(t, ids)), [n(5, 3)]),
        "masked_fill": (lambda a: _weighted(ad.masked_fill(a, mask, -7.0)), [n(3, 4)]),
        "take_along_axis": (lambda a: _weighted(ad.take_along_axis(a, ids[:, :2, None] % 4, axis=-1)),
                            [n(3, 2, 4)]),
        "softmax": (lambda a: _weighted(ad.softmax(a, axis=-1)), [n(3, 5)]),
        "log_softmax": (lambda a: _weighted(ad.log_softmax(a, axis=0)), [n(3, 5)]),
        "layer_norm": (lambda a, g, b: _weighted(ad.layer_norm(a, g, b)), [n(3, 6), n(6), n(6)]),
        "dropout": (lambda a: _weighted(ad.dropout(a, 0.4, keep_stream())), [n(3, 4)]),
        "conv1d": (lambda x, w, b: _weighted(ad.conv1d(x, w, b)), [n(2, 6, 3), n(3, 3, 4), n(4)]),
        "max_pool1d": (lambda x: _weighted(ad.max_pool1d(x, [5, 3])), [n(2, 5, 4)]),
        "cross_entropy": (lambda z: ad.cross_entropy(z, ids[:, :3], mask[:, :3] | True), [n(3, 3, 5)]),
        "gru_cell": (lambda h, x, *p: _weighted(ad.gru_cell(h, x, dict(zip(gru_names, p)))),
                     [n(2, 3), n(2, 4)] + [gru[k] for k in gru_names]),
    }
