"""Transformer building blocks shared by the generator and the discriminators.

Parameters live in flat ``dict[str, Tensor]`` maps keyed by dotted names, which
is also the layout written to checkpoints. Layers are pre-norm.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .tensor import Tensor, parameter

Params = dict[str, Tensor]


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int
    num_styles: int = 2
    num_layers: int = 2
    num_heads: int = 2
    model_dim: int = 64
    ff_dim: int = 128
    max_len: int = 32

    def __post_init__(self):
        for field in ("vocab_size", "num_styles", "num_layers", "num_heads", "model_dim", "ff_dim", "max_len"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be positive")
        if self.model_dim % self.num_heads:
            raise ValueError(f"model_dim ({self.model_dim}) must be divisible by num_heads ({self.num_heads})")

    @classmethod
    def paper_size(cls, vocab_size: int, num_styles: int = 2) -> "TransformerConfig":
        return cls(vocab_size, num_styles, num_layers=4, num_heads=4, model_dim=256, ff_dim=1024, max_len=64)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# initialisation


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_linear(p: Params, name: str, n_in: int, n_out: int, rng: np.random.Generator) -> None:
    p[f"{name}.w"] = parameter(_uniform(rng, (n_in, n_out), n_in), name=f"{name}.w")
    p[f"{name}.b"] = parameter(np.zeros(n_out), name=f"{name}.b")


def init_layer_norm(p: Params, name: str, dim: int) -> None:
    p[f"{name}.g"] = parameter(np.ones(dim), name=f"{name}.g")
    p[f"{name}.b"] = parameter(np.zeros(dim), name=f"{name}.b")


def init_embedding(p: Params, name: str, rows: int, dim: int, rng: np.random.Generator) -> None:
    p[name] = parameter(_uniform(rng, (rows, dim), dim), name=name)


def init_attention(p: Params, name: str, d: int, rng: np.random.Generator) -> None:
    for part in ("q", "k", "v", "o"):
        init_linear(p, f"{name}.{part}", d, d, rng)


def init_encoder_stack(p: Params, name: str, cfg: TransformerConfig, rng: np.random.Generator) -> None:
    d = cfg.model_dim
    for i in range(cfg.num_layers):
        pre = f"{name}.{i}"
        init_layer_norm(p, f"{pre}.ln1", d)
        init_attention(p, f"{pre}.attn", d, rng)
        init_layer_norm(p, f"{pre}.ln2", d)
        init_linear(p, f"{pre}.ff1", d, cfg.ff_dim, rng)
        init_linear(p, f"{pre}.ff2", cfg.ff_dim, d, rng)
    init_layer_norm(p, f"{name}.ln", d)


def init_decoder_stack(p: Params, name: str, cfg: TransformerConfig, rng: np.random.Generator) -> None:
    d = cfg.model_dim
    for i in range(cfg.num_layers):
        pre = f"{name}.{i}"
        init_layer_norm(p, f"{pre}.ln1", d)
        init_attention(p, f"{pre}.self", d, rng)
        init_layer_norm(p, f"{pre}.ln2", d)
        init_attention(p, f"{pre}.cross", d, rng)
        init_layer_norm(p, f"{pre}.ln3", d)
        init_linear(p, f"{pre}.ff1", d, cfg.ff_dim, rng)
        init_linear(p, f"{pre}.ff2", cfg.ff_dim, d, rng)
    init_layer_norm(p, f"{name}.ln", d)


# ---------------------------------------------------------------------------
# layers


def linear(p: Params, name: str, x) -> Tensor:
    return ops.linear(x, p[f"{name}.w"], p[f"{name}.b"])


def layer_norm(p: Params, name: str, x) -> Tensor:
    return ops.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])


def multi_head_attention(p: Params, name: str, x_q, x_kv, allowed, num_heads: int, return_weights: bool = False):
    """Project, attend per head, concatenate heads and project back."""
    q = linear(p, f"{name}.q", x_q)
    k = linear(p, f"{name}.k", x_kv)
    v = linear(p, f"{name}.v", x_kv)
    if return_weights:
        a, w = ops.attention(q, k, v, allowed, num_heads, return_weights=True)
        return linear(p, f"{name}.o", a), w
    return linear(p, f"{name}.o", ops.attention(q, k, v, allowed, num_heads))


def feed_forward(p: Params, name: str, x) -> Tensor:
    return linear(p, f"{name}.ff2", ops.gelu(linear(p, f"{name}.ff1", x)))


def encoder_stack(p: Params, name: str, cfg: TransformerConfig, x: Tensor, key_allowed: np.ndarray) -> Tensor:
    """Run the pre-norm encoder layers; ``key_allowed`` is (B, L) validity."""
    allowed = key_allowed[:, None, :]
    for i in range(cfg.num_layers):
        pre = f"{name}.{i}"
        h = layer_norm(p, f"{pre}.ln1", x)
        x = ops.add(x, multi_head_attention(p, f"{pre}.attn", h, h, allowed, cfg.num_heads))
        x = ops.add(x, feed_forward(p, pre, layer_norm(p, f"{pre}.ln2", x)))
    return layer_norm(p, f"{name}.ln", x)


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


def decoder_stack(
    p: Params, name: str, cfg: TransformerConfig, x: Tensor, memory: Tensor, memory_allowed: np.ndarray
) -> Tensor:
    """Full-sequence decoder with a causal self-attention mask."""
    self_allowed = causal_mask(x.shape[1])[None]
    mem_allowed = memory_allowed[:, None, :]
    for i in range(cfg.num_layers):
        pre = f"{name}.{i}"
        h = layer_norm(p, f"{pre}.ln1", x)
        x = ops.add(x, multi_head_attention(p, f"{pre}.self", h, h, self_allowed, cfg.num_heads))
        h = layer_norm(p, f"{pre}.ln2", x)
        x = ops.add(x, multi_head_attention(p, f"{pre}.cross", h, memory, mem_allowed, cfg.num_heads))
        x = ops.add(x, feed_forward(p, pre, layer_norm(p, f"{pre}.ln3", x)))
    return layer_norm(p, f"{name}.ln", x)


class IncrementalDecoder:
    """Decoder that consumes one position per call, caching keys and values.

    Produces the same values as :func:`decoder_stack` on the full prefix, but
    each call only computes the newest position.
    """

    def __init__(self, p: Params, name: str, cfg: TransformerConfig, memory: Tensor, memory_allowed: np.ndarray):
        self.p, self.name, self.cfg = p, name, cfg
        self.mem_allowed = memory_allowed[:, None, :]
        self.mem_kv = [
            (linear(p, f"{name}.{i}.cross.k", memory), linear(p, f"{name}.{i}.cross.v", memory))
            for i in range(cfg.num_layers)
        ]
        self.cache: list[tuple[Tensor, Tensor] | None] = [None] * cfg.num_layers

    def step(self, x: Tensor) -> Tensor:
        """``x`` is the (B, 1, d) input embedding of the newest position."""
        p, cfg = self.p, self.cfg
        for i in range(cfg.num_layers):
            pre = f"{self.name}.{i}"
            h = layer_norm(p, f"{pre}.ln1", x)
            k = linear(p, f"{pre}.self.k", h)
            v = linear(p, f"{pre}.self.v", h)
            if self.cache[i] is not None:
                k = ops.concat([self.cache[i][0], k], axis=1)
                v = ops.concat([self.cache[i][1], v], axis=1)
            self.cache[i] = (k, v)
            q = linear(p, f"{pre}.self.q", h)
            x = ops.add(x, linear(p, f"{pre}.self.o", ops.attention(q, k, v, None, cfg.num_heads)))
            h = layer_norm(p, f"{pre}.ln2", x)
            q = linear(p, f"{pre}.cross.q", h)
            mk, mv = self.mem_kv[i]
            x = ops.add(x, linear(p, f"{pre}.cross.o", ops.attention(q, mk, mv, self.mem_allowed, cfg.num_heads)))
            x = ops.add(x, feed_forward(p, pre, layer_norm(p, f"{pre}.ln3", x)))
        return layer_norm(p, f"{self.name}.ln", x)


# ---------------------------------------------------------------------------
# embeddings


def embed_tokens(table: Tensor, tokens) -> Tensor:
    """Hard ids go through a lookup; soft (B, L, V) distributions are mixed."""
    if isinstance(tokens, Tensor):
        return ops.embedding_mix(tokens, table)
    return ops.embedding_lookup(tokens, table)


def length_mask(lengths: np.ndarray, width: int) -> np.ndarray:
    return np.arange(width)[None, :] < np.asarray(lengths)[:, None]


def check_style_ids(styles, num_styles: int) -> np.ndarray:
    styles = np.asarray(styles, dtype=np.int64)
    if styles.size and (styles.min() < 1 or styles.max() > num_styles):
        raise ValueError(f"style id out of range 1..{num_styles}: {styles.tolist()}")
    return styles


def encoder_forward(
    p: Params, cfg: TransformerConfig, tokens, lengths, styles, prefix: str = "enc"
) -> tuple[Tensor, np.ndarray]:
    """Encode ``[style] ++ (token + position)`` embeddings.

    ``tokens`` is a (B, L) id array or a (B, L, V) distribution Tensor, and
    ``lengths`` counts the valid positions of each row. Returns the encoder
    output of width L + 1 and its (B, L + 1) validity mask.
    """
    styles = check_style_ids(styles, cfg.num_styles)
    width = tokens.shape[1]
    if width > cfg.max_len - 1:
        raise ValueError(f"input length {width} exceeds max_len - 1 = {cfg.max_len - 1}")
    B = tokens.shape[0]
    emb = ops.add(embed_tokens(p["tok_emb"], tokens), p[f"{prefix}.pos"][:width])
    style = ops.reshape(ops.embedding_lookup(styles - 1, p["style_emb"]), (B, 1, cfg.model_dim))
    x = ops.concat([style, emb], axis=1)
    allowed = np.concatenate([np.ones((B, 1), dtype=bool), length_mask(lengths, width)], axis=1)
    return encoder_stack(p, prefix, cfg, x, allowed), allowed


def decoder_forward(
    p: Params, cfg: TransformerConfig, memory: Tensor, memory_allowed: np.ndarray, prefix, bos_id: int,
    prefix_name: str = "dec",
) -> Tensor:
    """Next-token logits for every prefix position (teacher forcing).

    ``prefix`` is a (B, L) id array or a (B, L, V) distribution Tensor whose
    first position must be the begin-of-sentence marker.
    """
    first = np.argmax(prefix.data[:, 0], axis=-1) if isinstance(prefix, Tensor) else np.asarray(prefix)[:, 0]
    if np.any(first != bos_id):
        raise ValueError("decoder prefix must start with the begin-of-sentence marker")
    width = prefix.shape[1]
    if width > cfg.max_len:
        raise ValueError(f"prefix length {width} exceeds max_len {cfg.max_len}")
    x = ops.add(embed_tokens(p["tok_emb"], prefix), p[f"{prefix_name}.pos"][:width])
    h = decoder_stack(p, prefix_name, cfg, x, memory, memory_allowed)
    return linear(p, "out", h)
