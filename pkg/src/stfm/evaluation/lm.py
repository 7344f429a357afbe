"""Word n-gram language models for fluency (perplexity) scoring.

Sentences are token sequences without markers; each is scored as
``w_1 .. w_m </s>`` with ``order - 1`` start symbols of left context.
Tokens never seen in training map to a single unknown symbol.

Two modes:

* ``"kn"``: interpolated Kneser-Ney with a fixed absolute discount. The
  highest order uses raw counts, lower orders use continuation counts
  (number of distinct left extensions), and the unigram level is
  interpolated with a uniform distribution over the vocabulary so that
  every token, including the unknown symbol, has nonzero probability.
* ``"mle"``: unsmoothed relative frequencies at the highest order; any
  unseen event makes the perplexity infinite.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

START = "<s>"
END = "</s>"
UNKNOWN = "<unk>"
MODES = ("kn", "mle")


@dataclass
class NgramLM:
    order: int
    mode: str
    discount: float
    vocab: frozenset
    # counts[k][(h..., w)]: raw counts for k == order, continuation counts below
    counts: list[dict[tuple, int]] = field(repr=False)
    # ctx_total[k][h] = sum_w counts[k][h + (w,)];  ctx_types[k][h] = #{w : counts > 0}
    ctx_total: list[dict[tuple, int]] = field(repr=False)
    ctx_types: list[dict[tuple, int]] = field(repr=False)

    def map_token(self, w: Hashable) -> Hashable:
        return w if w in self.vocab else UNKNOWN

    def prob(self, word: Hashable, context: Sequence[Hashable]) -> float:
        """p(word | last order-1 tokens of context); context may contain START."""
        word = self.map_token(word)
        h = tuple(w if w == START else self.map_token(w) for w in context)
        need = self.order - 1
        h = ((START,) * need + h)[-need:] if need else ()
        if self.mode == "mle":
            tot = self.ctx_total[self.order].get(h, 0)
            return self.counts[self.order].get(h + (word,), 0) / tot if tot else 0.0
        return self._kn(word, h, self.order)

    def _kn(self, w, h: tuple, k: int) -> float:
        if k == 0:
            return 1.0 / len(self.vocab)
        lower = self._kn(w, h[1:], k - 1)
        tot = self.ctx_total[k].get(h, 0)
        if tot == 0:
            return lower
        c = self.counts[k].get(h + (w,), 0)
        types = self.ctx_types[k][h]
        return (max(c - self.discount, 0.0) + self.discount * types * lower) / tot

    def sentence_logprob(self, sentence: Sequence[Hashable]) -> tuple[float, int]:
        """(natural-log probability, number of scored tokens incl. </s>)."""
        ctx = [START] * (self.order - 1)
        total = 0.0
        for w in list(sentence) + [END]:
            p = self.prob(w, ctx)
            if p <= 0.0:
                return -math.inf, len(sentence) + 1
            total += math.log(p)
            ctx = ctx[1:] + [self.map_token(w)] if self.order > 1 else ctx
        return total, len(sentence) + 1


def train_lm(
    corpus: Iterable[Sequence[Hashable]], order: int = 5, mode: str = "kn", discount: float = 0.75
) -> NgramLM:
    if order < 1:
        raise ValueError("order must be at least 1")
    if mode not in MODES:
        raise ValueError(f"unknown LM mode {mode!r}; expected one of {MODES}")
    if mode == "kn" and not 0.0 < discount < 1.0:
        raise ValueError("Kneser-Ney discount must lie in (0, 1)")
    sentences = [list(s) for s in corpus]
    if not sentences:
        raise ValueError("cannot train a language model on an empty corpus")
    for s in sentences:
        if any(w in (START, END, UNKNOWN) for w in s):
            raise ValueError("training sentences must not contain the reserved LM symbols")
    vocab = frozenset(w for s in sentences for w in s) | {END, UNKNOWN}

    top: Counter = Counter()
    for s in sentences:
        padded = [START] * (order - 1) + s + [END]
        for i in range(order - 1, len(padded)):
            top[tuple(padded[i - order + 1 : i + 1])] += 1

    counts: list[dict[tuple, int]] = [dict() for _ in range(order + 1)]
    counts[order] = dict(top)
    for k in range(order - 1, 0, -1):
        if mode == "mle":
            break
        # distinct left extensions of each k-gram among the (k+1)-grams
        cont: Counter = Counter()
        for g in counts[k + 1]:
            cont[g[1:]] += 1
        counts[k] = dict(cont)

    ctx_total: list[dict[tuple, int]] = [dict() for _ in range(order + 1)]
    ctx_types: list[dict[tuple, int]] = [dict() for _ in range(order + 1)]
    for k in range(1, order + 1):
        tot: defaultdict = defaultdict(int)
        typ: defaultdict = defaultdict(int)
        for g, c in counts[k].items():
            tot[g[:-1]] += c
            typ[g[:-1]] += 1
        ctx_total[k], ctx_types[k] = dict(tot), dict(typ)
    return NgramLM(order, mode, discount, vocab, counts, ctx_total, ctx_types)


def perplexity(lm: NgramLM, sentences: Iterable[Sequence[Hashable]]) -> float:
    """exp(-mean log p) over every scored token; ``inf`` if any token has p = 0."""
    total, n = 0.0, 0
    for s in sentences:
        lp, m = lm.sentence_logprob(s)
        if lp == -math.inf:
            return math.inf
        total += lp
        n += m
    if n == 0:
        raise ValueError("perplexity of an empty test set is undefined")
    return math.exp(-total / n)
