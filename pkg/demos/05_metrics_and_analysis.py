"""Corpus metrics, binned reports and the attention-distance probe."""
# %% BLEU and chrF++
import numpy as np

from graphtransformer.analysis import attention_distance, binned_report
from graphtransformer.graph import augment, parse_penman
from graphtransformer.metrics import bleu, chrf_pp, sentence_chrf_pp
from graphtransformer.model import make_example

hyps = ["the boy wants the girl to believe him", "a cat sat on a mat"]
refs = ["the boy wants the girl to believe him", "the cat sat on the mat"]
print(f"BLEU {bleu(hyps, refs):.1f}  chrF++ {chrf_pp(hyps, refs):.1f}")
print(f"case-insensitive BLEU {bleu(['The Boy wants The Girl'], ['the boy wants the girl'], case_sensitive=False):.1f}")

# %% Sentence scores grouped by graph size
rng = np.random.default_rng(0)
amrs = ["(a / a-1)", "(w / want-01 :ARG0 (b / boy))", "(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))",
        "(s / say-01 :ARG0 (m / man) :ARG1 (w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b)))"] * 5
examples = [make_example(parse_penman(a)) for a in amrs]
scores = [sentence_chrf_pp(h, r) for h, r in zip(rng.choice(refs, 20), rng.choice(refs, 20))]
rep = binned_report(scores, [ex.stats for ex in examples], "size")
print(rep.to_csv())

# %% Attention distance: where does each node look hardest?
ex = make_example(parse_penman(amrs[3]))
n = ex.n + 1
eye = np.eye(n)
parent = np.zeros((n, n))
for e in ex.graph.original_edges():
    parent[e.dst, e.src] = 1.0
parent[0, 1] = 1.0  # the root looks at its first child
for row in attention_distance([[np.stack([eye, parent])]], [ex.paths.lengths], [ex.n]):
    print(f"layer {row.layer} head {row.head}: {row.avg_distance:.2f} hops")
