"""The style-conditioned encoder-decoder f(x, s) and its decoding modes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ops
from .data import BOS, EOS, Sentence, check_sentence, decoder_batch, encoder_batch
from .tensor import Tensor, no_grad
from .transformer import (
    IncrementalDecoder,
    Params,
    TransformerConfig,
    decoder_forward,
    embed_tokens,
    encoder_forward,
    init_decoder_stack,
    init_embedding,
    init_encoder_stack,
    init_linear,
    linear,
)


@dataclass
class SoftSentences:
    """A batch of decoded distributions.

    ``dists`` has shape (B, T, V); row b is valid up to ``lengths[b]``
    positions, the last of which is the step whose argmax was EOS (or the
    decode cap).
    """

    dists: Tensor
    lengths: np.ndarray

    def __len__(self) -> int:
        return self.dists.shape[0]

    def argmax_sentences(self) -> list[Sentence]:
        ids = self.dists.data.argmax(axis=-1)
        out = []
        for row, n in zip(ids, self.lengths):
            toks = [int(t) for t in row[:n] if t != EOS]
            # a row cut off before EOS keeps its width: the last token gives way to EOS
            out.append((BOS, *toks[: n - 1], EOS))
        return out

    def detach(self) -> "SoftSentences":
        return SoftSentences(self.dists.detach(), self.lengths.copy())

    @classmethod
    def one_hot(cls, sentences: Sequence[Sentence], vocab_size: int) -> "SoftSentences":
        """Exact distribution form of hard sentences (tokens + EOS)."""
        ids, lengths = encoder_batch(sentences)
        return cls(Tensor(np.eye(vocab_size)[ids]), lengths)


def as_encoder_input(x) -> tuple[np.ndarray | Tensor, np.ndarray]:
    """Normalise sentences / soft sentences / (ids, lengths) to encoder form."""
    if isinstance(x, SoftSentences):
        return x.dists, x.lengths
    if isinstance(x, tuple) and len(x) == 2 and isinstance(x[1], np.ndarray):
        return x
    return encoder_batch([check_sentence(s) for s in x])


def _broadcast_styles(styles, batch: int) -> np.ndarray:
    styles = np.asarray(styles, dtype=np.int64)
    return np.full(batch, int(styles)) if styles.ndim == 0 else styles


class StyleTransformer:
    """Encoder-decoder whose encoder input is prefixed by a style embedding."""

    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        d = cfg.model_dim
        p: Params = {}
        init_embedding(p, "tok_emb", cfg.vocab_size, d, rng)
        init_embedding(p, "style_emb", cfg.num_styles, d, rng)
        init_embedding(p, "enc.pos", cfg.max_len, d, rng)
        init_embedding(p, "dec.pos", cfg.max_len, d, rng)
        init_encoder_stack(p, "enc", cfg, rng)
        init_decoder_stack(p, "dec", cfg, rng)
        init_linear(p, "out", d, cfg.vocab_size, rng)
        self.params = p

    # -- network pieces ---------------------------------------------------

    def encode(self, x, styles):
        tokens, lengths = as_encoder_input(x)
        styles = _broadcast_styles(styles, tokens.shape[0])
        return encoder_forward(self.params, self.cfg, tokens, lengths, styles)

    def decode(self, memory: Tensor, memory_allowed: np.ndarray, prefix) -> Tensor:
        return decoder_forward(self.params, self.cfg, memory, memory_allowed, prefix, BOS)

    def teacher_forced(self, y: Sequence[Sentence], x, styles) -> tuple[Tensor, np.ndarray, np.ndarray]:
        """Logits for reproducing ``y`` given ``(x, styles)``; also targets and mask."""
        memory, allowed = self.encode(x, styles)
        prefix, targets, mask = decoder_batch([check_sentence(s) for s in y])
        return self.decode(memory, allowed, prefix), targets, mask

    def log_prob(self, y: Sequence[Sentence], x, styles) -> Tensor:
        """Per-sentence log p(y | x, s), shape (B,)."""
        logits, targets, mask = self.teacher_forced(y, x, styles)
        nll = ops.cross_entropy(logits, targets, mask, reduction="none")
        return ops.scale(ops.sum(nll, axis=1), -1.0)

    # -- decoding -----------------------------------------------------------

    def _start(self, batch: int) -> Tensor:
        bos = np.full((batch, 1), BOS, dtype=np.int64)
        return ops.add(embed_tokens(self.params["tok_emb"], bos), self.params["dec.pos"][0:1])

    def transfer_soft(
        self,
        x,
        styles,
        temperature: float = 1.0,
        max_steps: int | None = None,
        forced_tokens: np.ndarray | None = None,
        return_logits: bool = False,
    ):
        """Continuous decoding: each step feeds back the full softmax output.

        The next input embedding is the distribution-weighted mix of token
        embeddings. Decoding stops once every row has emitted an argmax EOS
        or after ``max_steps`` steps (default: longest input + 4). With
        ``forced_tokens`` (B, T) the fed-back distribution is replaced by
        the one-hot of the given ids (teacher forcing through the same path).
        """
        if not temperature > 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        tokens, lengths = as_encoder_input(x)
        B = tokens.shape[0]
        memory, allowed = self.encode((tokens, lengths), styles)
        if max_steps is None:
            max_steps = int(lengths.max()) + 4
        max_steps = min(max_steps, self.cfg.max_len - 1)
        if forced_tokens is not None:
            max_steps = min(max_steps, forced_tokens.shape[1])
        dec = IncrementalDecoder(self.params, "dec", self.cfg, memory, allowed)
        table, pos = self.params["tok_emb"], self.params["dec.pos"]
        inp = self._start(B)
        dists, logits_all = [], []
        out_len = np.full(B, max_steps, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        eye = np.eye(self.cfg.vocab_size) if forced_tokens is not None else None
        for t in range(max_steps):
            logits = linear(self.params, "out", dec.step(inp))
            dist = ops.softmax(logits, temperature)
            dists.append(dist)
            if return_logits:
                logits_all.append(logits)
            hit = (~done) & (dist.data[:, 0].argmax(axis=-1) == EOS)
            out_len[hit] = t + 1
            done |= hit
            if t + 1 == max_steps or (done.all() and forced_tokens is None):
                break
            feed = dist if forced_tokens is None else Tensor(eye[forced_tokens[:, t]][:, None, :])
            inp = ops.add(ops.embedding_mix(feed, table), pos[t + 1 : t + 2])
        soft = SoftSentences(ops.concat(dists, axis=1) if len(dists) > 1 else dists[0], out_len)
        if return_logits:
            return soft, ops.concat(logits_all, axis=1) if len(logits_all) > 1 else logits_all[0]
        return soft

    def transfer_greedy(self, sentences: Sequence[Sentence], styles, max_len: int | None = None) -> list[Sentence]:
        """Argmax decoding (ties go to the lower id), BOS ... EOS output.

        ``max_len`` bounds the output length including both markers; by
        default each sentence may grow by four tokens.
        """
        sentences = [check_sentence(s) for s in sentences]
        if max_len is not None and max_len < 2:
            raise ValueError("max_len must be at least 2")
        limits = np.array(
            [min(len(s) + 4 if max_len is None else max_len, self.cfg.max_len) for s in sentences], dtype=np.int64
        )
        B = len(sentences)
        out: list[list[int]] = [[] for _ in range(B)]
        with no_grad():
            memory, allowed = self.encode(sentences, styles)
            dec = IncrementalDecoder(self.params, "dec", self.cfg, memory, allowed)
            table, pos = self.params["tok_emb"], self.params["dec.pos"]
            inp = self._start(B)
            done = limits <= 2
            steps = int(limits.max()) - 1
            for t in range(steps):
                logits = linear(self.params, "out", dec.step(inp)).data[:, 0]
                ids = logits.argmax(axis=-1)
                for b in np.flatnonzero(~done):
                    if ids[b] == EOS:
                        done[b] = True
                    else:
                        out[b].append(int(ids[b]))
                        if len(out[b]) >= limits[b] - 2:
                            done[b] = True
                if done.all() or t + 1 == steps:
                    break
                inp = ops.add(embed_tokens(table, ids[:, None]), pos[t + 1 : t + 2])
        return [(BOS, *toks, EOS) for toks in out]
