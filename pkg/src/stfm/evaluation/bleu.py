"""BLEU with clipped n-gram precision (n = 1..4) and a brevity penalty.

Scores are on a 0-100 scale. The brevity penalty compares against the
shortest reference. An order with no clipped matches contributes
``EPSILON`` in place of a zero numerator, so short or disjoint candidates
get a tiny positive score rather than a log-of-zero.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Hashable, Sequence

EPSILON = 1e-9
MAX_ORDER = 4


def ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _effective_ref_len(refs: Sequence[Sequence[Hashable]]) -> int:
    # the shortest reference, so adding a reference can never raise the brevity penalty
    return min(len(r) for r in refs)


def _stats(candidate, references) -> tuple[list[int], list[int], int, int]:
    matches, totals = [], []
    for n in range(1, MAX_ORDER + 1):
        cand = ngrams(candidate, n)
        max_ref: Counter = Counter()
        for ref in references:
            for g, c in ngrams(ref, n).items():
                if c > max_ref[g]:
                    max_ref[g] = c
        matches.append(sum(min(c, max_ref[g]) for g, c in cand.items()))
        totals.append(max(len(candidate) - n + 1, 0))
    return matches, totals, len(candidate), _effective_ref_len(references)


def _score(matches, totals, cand_len, ref_len) -> float:
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        num = m if m > 0 else EPSILON
        log_p += math.log(num / max(t, 1))
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_p / MAX_ORDER)


def sentence_bleu(candidate: Sequence[Hashable], references: Sequence[Sequence[Hashable]]) -> float:
    if not references:
        raise ValueError("BLEU needs at least one reference")
    return _score(*_stats(list(candidate), [list(r) for r in references]))


def corpus_bleu(
    candidates: Sequence[Sequence[Hashable]], references: Sequence[Sequence[Sequence[Hashable]]]
) -> float:
    """Corpus-level BLEU: n-gram statistics are summed before combining."""
    if len(candidates) != len(references):
        raise ValueError("need one reference list per candidate")
    if not candidates:
        raise ValueError("corpus BLEU of an empty corpus is undefined")
    M = [0] * MAX_ORDER
    T = [0] * MAX_ORDER
    c_len = r_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("BLEU needs at least one reference")
        m, t, c, r = _stats(list(cand), [list(x) for x in refs])
        M = [a + b for a, b in zip(M, m)]
        T = [a + b for a, b in zip(T, t)]
        c_len += c
        r_len += r
    return _score(M, T, c_len, r_len)
