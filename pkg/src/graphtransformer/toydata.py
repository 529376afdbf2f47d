"""Small synthetic subject-verb-object corpus for smoke tests and demos."""
from __future__ import annotations

import numpy as np

from .graph import LabeledGraph, make_graph

SUBJECTS = ["boy", "girl", "dog", "cat", "teacher", "farmer", "child", "doctor"]
OBJECTS = ["ball", "apple", "book", "house", "car", "letter", "bread", "song"]
VERBS = {"want-01": "wants", "see-01": "sees", "like-01": "likes", "eat-01": "eats",
         "read-01": "reads", "buy-01": "buys", "find-01": "finds", "write-01": "writes"}


def svo_graph(verb: str, subj: str, obj: str) -> LabeledGraph:
    return make_graph([verb, subj, obj], [(0, 1, "ARG0"), (0, 2, "ARG1")], root=0)


def svo_sentence(verb: str, subj: str, obj: str) -> str:
    return f"the {subj} {VERBS[verb]} the {obj}"


def toy_corpus(n: int = 20, seed: int = 0) -> list[tuple[LabeledGraph, str]]:
    """``n`` distinct templated (graph, sentence) pairs, drawn without replacement."""
    rng = np.random.default_rng(seed)
    verbs = sorted(VERBS)
    total = len(verbs) * len(SUBJECTS) * len(OBJECTS)
    if n > total:
        raise ValueError(f"at most {total} distinct pairs")
    out = []
    for k in rng.choice(total, size=n, replace=False):
        v, rest = divmod(int(k), len(SUBJECTS) * len(OBJECTS))
        s, o = divmod(rest, len(OBJECTS))
        args = (verbs[v], SUBJECTS[s], OBJECTS[o])
        out.append((svo_graph(*args), svo_sentence(*args)))
    return out
