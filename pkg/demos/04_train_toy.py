"""Train a small model on templated sentences and decode unseen graphs.

The model is shrunk (one layer, width 64) so this finishes in well under a minute.
"""
# %% Data
import time

from graphtransformer.model import make_example
from graphtransformer.toydata import svo_graph, toy_corpus
from graphtransformer.training import TrainConfig, evaluate_accuracy, train

pairs = toy_corpus(20, seed=0)
examples = [make_example(g, s) for g, s in pairs]
print(pairs[0][1])

# %% Train
config = TrainConfig(layers=1, d_model=64, heads=4, d_ff=128, node_dim=32, edge_dim=16, token_dim=32,
                     char_dim=8, char_filters=32, char_out=16, rel_hidden=16, batch_size=10,
                     max_steps=300, warmup=50, log_every=100, dropout=0.1)
t0 = time.perf_counter()
result = train(config, examples)
model = result.model
print(f"{len(result.history)} steps in {time.perf_counter() - t0:.0f}s, final loss {result.history[-1].loss:.3f}")
print("teacher-forced accuracy:", round(evaluate_accuracy(model, examples), 3))

# %% Decode training graphs with beam search
for ex in examples[:3]:
    print(" ".join(model.generate(ex, beam=4).words), " | ", " ".join(ex.target))

# %% An unseen noun can still be produced by copying the node label
new = make_example(svo_graph("see-01", "dog", "zebra"))
hyp = model.generate(new, beam=4)
print(" ".join(hyp.words), " copied:", [w for w, c in zip(hyp.words, hyp.copied) if c])
