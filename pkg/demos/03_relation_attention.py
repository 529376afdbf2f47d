"""Relation-aware attention, term by term."""
# %% Build a small attention layer and a graph's relation table
import numpy as np

from graphtransformer import autodiff as ad
from graphtransformer.encoder import RelationAttention
from graphtransformer.graph import augment, parse_penman
from graphtransformer.model import build_vocabs, make_example
from graphtransformer.relation import RelationEncoder, RelationTable
from graphtransformer.relpath import select_paths

ad.set_default_dtype(np.float64)
rng = np.random.default_rng(0)
ex = make_example(parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))"))
vocabs = build_vocabs([ex])
rel_enc = RelationEncoder(rng, vocabs.edge, edge_dim=8, hidden=6, d_model=16)
rel = rel_enc.encode_table([select_paths(ex.paths, "test")])
attn = RelationAttention(rng, d_model=16, heads=2)
x = ad.Tensor(rng.normal(size=(1, ex.n + 1, 16)))

# %% Four score terms: content, source relation, target relation, universal relation
terms = attn.terms(x, rel)
for name in ("content", "source_relation", "target_relation", "universal_relation"):
    print(f"{name:>18}: mean |s| = {np.abs(getattr(terms, name).data).mean():.3f}")

# %% Removing the relations leaves plain scaled dot-product attention
z = np.zeros_like(rel.fwd.data)
plain = attn.scores(x, RelationTable(ad.Tensor(z), ad.Tensor(z)))
dh = 8
q = (x.data @ attn.w_q.data)[0].reshape(-1, 2, dh).transpose(1, 0, 2)
k = (x.data @ attn.w_k.data)[0].reshape(-1, 2, dh).transpose(1, 0, 2)
print("matches q.k / sqrt(d):", np.array_equal(plain.data[0], q @ k.transpose(0, 2, 1) / np.sqrt(dh)))

# %% Attention over every node, the global node included, with no adjacency mask
out, weights = attn(x, rel)
np.set_printoptions(precision=2, suppress=True)
print(weights.data[0, 0])
