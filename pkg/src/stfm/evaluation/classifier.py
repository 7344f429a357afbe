"""Bag-of-n-gram linear style classifier with hashed features.

Unigram and bigram counts are hashed (CRC-32, so buckets do not depend on
the interpreter's hash seed) into ``2**18`` buckets and scored by a
softmax-regression layer. Training is full-batch gradient descent on the
class-balanced mean cross entropy. Identical training sentences are merged
into one row with a multiplicity weight, so duplicating a class's data
leaves the trained weights bit-for-bit unchanged.
"""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

NUM_BUCKETS = 2**18
NGRAM_ORDERS = (1, 2)


def features(tokens: Sequence[Hashable], buckets: int = NUM_BUCKETS) -> Counter:
    """Hashed 1-2-gram counts of a token sequence."""
    out: Counter = Counter()
    toks = [str(t) for t in tokens]
    for n in NGRAM_ORDERS:
        for i in range(len(toks) - n + 1):
            key = f"{n}\x1f" + "\x1f".join(toks[i : i + n])
            out[zlib.crc32(key.encode("utf-8")) % buckets] += 1
    return out


class _Design:
    """A ragged sparse design matrix: per row, bucket ids and counts."""

    def __init__(self, rows: list[Counter]):
        self.n = len(rows)
        lengths = np.array([len(r) for r in rows], dtype=np.int64)
        self.row = np.repeat(np.arange(self.n), lengths)
        self.col = np.fromiter((k for r in rows for k in r), dtype=np.int64, count=int(lengths.sum()))
        self.val = np.fromiter((v for r in rows for v in r.values()), dtype=np.float64, count=int(lengths.sum()))

    def scores(self, W: np.ndarray, b: np.ndarray) -> np.ndarray:
        out = np.empty((self.n, W.shape[1]))
        for k in range(W.shape[1]):
            out[:, k] = b[k] + np.bincount(self.row, W[self.col, k] * self.val, minlength=self.n)
        return out

    def grad_w(self, G: np.ndarray, shape) -> np.ndarray:
        gw = np.empty(shape)
        for k in range(shape[1]):
            gw[:, k] = np.bincount(self.col, G[self.row, k] * self.val, minlength=shape[0])
        return gw


@dataclass
class StyleClassifier:
    W: np.ndarray  # (buckets, K)
    b: np.ndarray  # (K,)
    labels: tuple  # class index -> style id

    def scores(self, sentences: Sequence[Sequence[Hashable]]) -> np.ndarray:
        if not sentences:
            return np.zeros((0, len(self.labels)))
        return _Design([features(s, self.W.shape[0]) for s in sentences]).scores(self.W, self.b)

    def predict(self, sentences: Sequence[Sequence[Hashable]]) -> list:
        """Argmax class (ties to the lower index), mapped back to style ids."""
        return [self.labels[i] for i in self.scores(sentences).argmax(axis=1)]

    def accuracy(self, sentences, styles) -> float:
        if len(sentences) != len(styles):
            raise ValueError("need one style per sentence")
        if not sentences:
            raise ValueError("accuracy of an empty set is undefined")
        pred = self.predict(sentences)
        return 100.0 * float(np.mean([p == s for p, s in zip(pred, styles)]))


def train_classifier(
    corpora: Sequence[tuple[Hashable, Sequence[Sequence[Hashable]]]],
    epochs: int = 200,
    lr: float = 1.0,
    l2: float = 0.0,
    buckets: int = NUM_BUCKETS,
) -> StyleClassifier:
    """Fit on ``[(style_id, sentences), ...]`` with one full-batch step per epoch."""
    labels = tuple(style for style, _ in corpora)
    if len(set(labels)) < 2:
        raise ValueError("the classifier needs sentences from at least two styles")
    if len(set(labels)) != len(labels):
        raise ValueError("each style must appear once")
    rows, y, weight = [], [], []
    for k, (_, sents) in enumerate(corpora):
        if not sents:
            raise ValueError(f"style {labels[k]!r} has no training sentences")
        mult = Counter(tuple(s) for s in sents)
        for s in sorted(mult, key=repr):
            rows.append(features(s, buckets))
            y.append(k)
            # balanced objective: each class contributes equally
            weight.append(mult[s] / len(sents) / len(labels))
    X = _Design(rows)
    # train on the occupied buckets only; the rest keep zero weight
    used, X.col = np.unique(X.col, return_inverse=True)
    y = np.array(y)
    weight = np.array(weight)
    K = len(labels)
    Wc = np.zeros((len(used), K))
    b = np.zeros(K)
    onehot = np.eye(K)[y]
    for _ in range(epochs):
        z = X.scores(Wc, b)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        G = (p - onehot) * weight[:, None]
        Wc -= lr * (X.grad_w(G, Wc.shape) + l2 * Wc)
        b -= lr * G.sum(axis=0)
    W = np.zeros((buckets, K))
    W[used] = Wc
    return StyleClassifier(W, b, labels)


def transfer_accuracy(clf: StyleClassifier, transferred: Sequence[Sequence[Hashable]], targets: Sequence) -> float:
    """Percentage of transferred sentences classified as their target style."""
    return clf.accuracy(transferred, targets)
