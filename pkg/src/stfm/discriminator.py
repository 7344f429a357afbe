"""Transformer-encoder discriminators.

The input sequence is ``[<cls>] (+ [style]) ++ token embeddings``; only the
token positions get positional encodings. The encoder output at the <cls>
position is projected to class logits:

* conditional: 2 classes, 1 = "this sentence has the proposed style";
* multi-class: K + 1 classes, 0 = generated/fake, i = style i.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .generator import SoftSentences, as_encoder_input
from .tensor import Tensor
from .transformer import (
    Params,
    TransformerConfig,
    check_style_ids,
    embed_tokens,
    encoder_stack,
    init_embedding,
    init_encoder_stack,
    init_linear,
    length_mask,
    linear,
)

CONDITIONAL = "conditional"
MULTICLASS = "multiclass"
VARIANTS = (CONDITIONAL, MULTICLASS)


class Discriminator:
    def __init__(self, cfg: TransformerConfig, variant: str = MULTICLASS, rng: np.random.Generator | int = 0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown discriminator variant {variant!r}")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.variant = variant
        self.num_classes = 2 if variant == CONDITIONAL else cfg.num_styles + 1
        d = cfg.model_dim
        p: Params = {}
        init_embedding(p, "tok_emb", cfg.vocab_size, d, rng)
        init_embedding(p, "cls_emb", 1, d, rng)
        if variant == CONDITIONAL:
            init_embedding(p, "style_emb", cfg.num_styles, d, rng)
        init_embedding(p, "pos", cfg.max_len, d, rng)
        init_encoder_stack(p, "enc", cfg, rng)
        init_linear(p, "head", d, self.num_classes, rng)
        self.params = p

    @property
    def prefix_len(self) -> int:
        return 2 if self.variant == CONDITIONAL else 1

    def logits(self, x, styles=None) -> Tensor:
        """Class logits (B, C) for sentences or soft sentences."""
        tokens, lengths = as_encoder_input(x)
        B, width = tokens.shape[0], tokens.shape[1]
        if width > self.cfg.max_len:
            raise ValueError(f"input length {width} exceeds max_len {self.cfg.max_len}")
        p, d = self.params, self.cfg.model_dim
        parts = [ops.reshape(ops.embedding_lookup(np.zeros(B, dtype=np.int64), p["cls_emb"]), (B, 1, d))]
        if self.variant == CONDITIONAL:
            if styles is None:
                raise ValueError("the conditional discriminator needs a proposal style")
            styles = np.asarray(styles, dtype=np.int64)
            styles = np.full(B, int(styles)) if styles.ndim == 0 else styles
            styles = check_style_ids(styles, self.cfg.num_styles)
            parts.append(ops.reshape(ops.embedding_lookup(styles - 1, p["style_emb"]), (B, 1, d)))
        elif styles is not None:
            raise ValueError("the multi-class discriminator takes no proposal style")
        parts.append(ops.add(embed_tokens(p["tok_emb"], tokens), p["pos"][:width]))
        x_in = ops.concat(parts, axis=1)
        allowed = np.concatenate(
            [np.ones((B, self.prefix_len), dtype=bool), length_mask(lengths, width)], axis=1
        )
        h = encoder_stack(p, "enc", self.cfg, x_in, allowed)
        return linear(p, "head", h[:, 0])

    def score_conditional(self, x, styles) -> np.ndarray:
        """p(class = 1 | x, s) for each row."""
        if self.variant != CONDITIONAL:
            raise ValueError("score_conditional needs the conditional variant")
        return ops.softmax(self.logits(x, styles)).data[:, 1]

    def score_multiclass(self, x) -> np.ndarray:
        """Distribution over K + 1 classes (0 = fake) for each row."""
        if self.variant != MULTICLASS:
            raise ValueError("score_multiclass needs the multi-class variant")
        return ops.softmax(self.logits(x)).data


def pad_soft(batches: list[SoftSentences]) -> SoftSentences:
    """Concatenate soft batches along the batch axis, padding with PAD one-hots (masked out downstream)."""
    width = max(b.dists.shape[1] for b in batches)
    V = batches[0].dists.shape[2]
    parts = []
    for b in batches:
        extra = width - b.dists.shape[1]
        if extra:
            fill = np.zeros((b.dists.shape[0], extra, V))
            fill[..., 0] = 1.0
            parts.append(ops.concat([b.dists, Tensor(fill)], axis=1))
        else:
            parts.append(b.dists)
    return SoftSentences(ops.concat(parts, axis=0), np.concatenate([b.lengths for b in batches]))
