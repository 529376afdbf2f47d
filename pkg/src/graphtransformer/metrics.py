"""Corpus BLEU-4 and chrF++ on whitespace-tokenized text."""
from __future__ import annotations

import math
import string
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

_PUNCT = set(string.punctuation)


def _check(hyps: Sequence[str], refs: Sequence[str]) -> None:
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise ValueError("empty corpus")


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuStats:
    matches: list[int]
    totals: list[int]
    hyp_len: int
    ref_len: int


def bleu_stats(hyps: Sequence[str], refs: Sequence[str], case_sensitive: bool = True, order: int = 4) -> BleuStats:
    matches = [0] * order
    totals = [0] * order
    hl = rl = 0
    for h, r in zip(hyps, refs):
        if not case_sensitive:
            h, r = h.lower(), r.lower()
        ht, rt = h.split(), r.split()
        hl += len(ht)
        rl += len(rt)
        for n in range(1, order + 1):
            hc, rc = _ngrams(ht, n), _ngrams(rt, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(ht) - n + 1, 0)
    return BleuStats(matches, totals, hl, rl)


def bleu(hyps: Sequence[str], refs: Sequence[str], case_sensitive: bool = True, smooth: bool = False) -> float:
    """Corpus BLEU-4 in [0, 100] with the standard brevity penalty, single reference.

    Without smoothing any zero n-gram precision makes the score 0; with
    ``smooth`` zero counts get the exponential-decay floor used by sacrebleu.
    A hypothesis sharing no n-gram at all with its reference scores 0 either way.
    """
    _check(hyps, refs)
    st = bleu_stats(hyps, refs, case_sensitive)
    if st.hyp_len == 0 or not any(st.matches):
        return 0.0
    log_p = 0.0
    inv = 1.0
    for m, t in zip(st.matches, st.totals):
        if t == 0 or (m == 0 and not smooth):
            return 0.0
        if m == 0:
            inv *= 2
            p = 1.0 / (inv * t)
        else:
            p = m / t
        log_p += math.log(p) / 4
    bp = 1.0 if st.hyp_len >= st.ref_len else math.exp(1 - st.ref_len / st.hyp_len)
    return 100.0 * bp * math.exp(log_p)


def _words(sent: str) -> list[str]:
    out = []
    for w in sent.split():
        if len(w) > 1 and w[-1] in _PUNCT:
            out += [w[:-1], w[-1]]
        elif len(w) > 1 and w[0] in _PUNCT:
            out += [w[0], w[1:]]
        else:
            out.append(w)
    return out


def chrf_stats(hyp: str, ref: str, char_order: int = 6, word_order: int = 2) -> list[tuple[int, int, int]]:
    """Per order ``(hyp_count, ref_count, matches)``; character orders first, then word orders."""
    stats = []
    hc, rc = "".join(hyp.split()), "".join(ref.split())
    for n in range(1, char_order + 1):
        a, b = _ngrams(hc, n), _ngrams(rc, n)
        stats.append((sum(a.values()), sum(b.values()), sum((a & b).values())))
    hw, rw = _words(hyp), _words(ref)
    for n in range(1, word_order + 1):
        a, b = _ngrams(hw, n), _ngrams(rw, n)
        stats.append((sum(a.values()), sum(b.values()), sum((a & b).values())))
    return stats


def _chrf_from_stats(stats: Sequence[tuple[int, int, int]], beta: float) -> float:
    prec = rec = 0.0
    effective = 0
    for n_hyp, n_ref, n_match in stats:
        if n_hyp > 0 and n_ref > 0:
            prec += n_match / n_hyp
            rec += n_match / n_ref
            effective += 1
    if effective == 0:
        return 0.0
    prec /= effective
    rec /= effective
    if prec + rec == 0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1 + b2) * prec * rec / (b2 * prec + rec)


def chrf_pp(hyps: Sequence[str], refs: Sequence[str], beta: float = 2.0, case_sensitive: bool = True) -> float:
    """Corpus chrF++: character 1..6-grams and word 1..2-grams, precision/recall averaged over orders.

    Statistics are summed over the corpus before the F-score is taken.
    """
    _check(hyps, refs)
    total = None
    for h, r in zip(hyps, refs):
        if not case_sensitive:
            h, r = h.lower(), r.lower()
        st = chrf_stats(h, r)
        total = st if total is None else [tuple(x + y for x, y in zip(a, b)) for a, b in zip(total, st)]
    return _chrf_from_stats(total, beta)


def sentence_chrf_pp(hyp: str, ref: str, beta: float = 2.0, case_sensitive: bool = True) -> float:
    return chrf_pp([hyp], [ref], beta, case_sensitive)
