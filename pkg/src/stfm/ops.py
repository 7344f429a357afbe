"""Differentiable operations on :class:`~stfm.tensor.Tensor`.

Each op computes its forward value with numpy and registers a closure that
maps the output gradient to input gradients. Transformer-sized primitives
(linear, layer_norm, attention, cross_entropy) are fused so that a single
tape node replaces a chain of elementwise nodes.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor, make_result

_NEG = -1e30


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_result("add", a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_result("sub", a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make_result("mul", ad * bd, (a, b), bwd)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return make_result("scale", x.data * c, (x,), lambda g: (g * c,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_result("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return make_result("log", np.log(xd), (x,), lambda g: (g / xd,))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_result("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bwd)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return make_result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return make_result("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    basic = _is_basic_index(index)

    def bwd(g):
        out = np.zeros(shape)
        if basic:
            out[index] += g
        else:
            np.add.at(out, index, g)
        return (out,)

    return make_result("getitem", np.array(x.data[index]), (x,), bwd)


def where(cond: np.ndarray, x, fill: float = 0.0) -> Tensor:
    """Keep ``x`` where ``cond`` holds, else the constant ``fill``."""
    x = as_tensor(x)
    cond = np.asarray(cond, dtype=bool)
    shape = x.shape
    return make_result(
        "where",
        np.where(cond, x.data, fill),
        (x,),
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), shape),),
    )


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batch axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                k = ad.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return make_result("matmul", ad @ bd, (a, b), bwd)


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` for x of shape (..., k), w (k, n), b (n,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear shape mismatch: {x.shape} @ {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        b = as_tensor(b)
        out += b.data
        inputs = (x, w, b)
    else:
        inputs = (x, w)

    def bwd(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.reshape(-1, xd.shape[-1]).T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result("linear", out, inputs, bwd)


# ---------------------------------------------------------------------------
# normalisation / activations


def _check_temperature(temperature: float) -> float:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return 1.0 / float(temperature)


def softmax(x, temperature: float = 1.0) -> Tensor:
    """Softmax over the last axis of ``x / temperature``."""
    x = as_tensor(x)
    inv_t = _check_temperature(temperature)
    if not np.isfinite(x.data).all():
        raise ValueError("softmax input contains non-finite values")
    p = kernels.softmax_fwd(np.ascontiguousarray(x.data), inv_t)
    return make_result("softmax", p, (x,), lambda g: (kernels.softmax_bwd(p, g, inv_t),))


def log_softmax(x, temperature: float = 1.0) -> Tensor:
    x = as_tensor(x)
    inv_t = _check_temperature(temperature)
    z = x.data * inv_t
    out = z - kernels.logsumexp(np.ascontiguousarray(z))[..., None]
    p = np.exp(out)

    def bwd(g):
        return ((g - p * g.sum(axis=-1, keepdims=True)) * inv_t,)

    return make_result("log_softmax", out, (x,), bwd)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    y, xhat, rstd = kernels.layer_norm_fwd(np.ascontiguousarray(x.data), gamma.data, beta.data, eps)
    gd = gamma.data
    return make_result(
        "layer_norm", y, (x, gamma, beta), lambda g: kernels.layer_norm_bwd(np.ascontiguousarray(g), xhat, rstd, gd)
    )


def gelu(x) -> Tensor:
    """Tanh-approximated GELU."""
    x = as_tensor(x)
    xd = np.ascontiguousarray(x.data)
    return make_result("gelu", kernels.gelu_fwd(xd), (x,), lambda g: (kernels.gelu_bwd(np.ascontiguousarray(g), xd),))


def dropout(x, rate: float, rng: np.random.Generator | int | None = None) -> Tensor:
    """Inverted dropout; ``rng`` may be a seed for reproducible masks."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if rate == 0.0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_result("dropout", x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# embeddings


def embedding_lookup(ids, table) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"embedding id out of range [0, {table.shape[0]})")
    shape = table.shape

    def bwd(g):
        out = np.zeros(shape)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return make_result("embedding", table.data[ids], (table,), bwd)


def embedding_mix(dist, table, tol: float = 1e-6) -> Tensor:
    """Probability-weighted average of embedding rows (one row per distribution)."""
    dist, table = as_tensor(dist), as_tensor(table)
    if dist.shape[-1] != table.shape[0]:
        raise ValueError(f"distribution width {dist.shape[-1]} does not match table rows {table.shape[0]}")
    totals = dist.data.sum(axis=-1)
    if not np.all(np.abs(totals - 1.0) <= tol):
        worst = float(np.max(np.abs(totals - 1.0)))
        raise ValueError(f"distributions must sum to 1 (max deviation {worst:.3g})")
    return matmul(dist, table)


# ---------------------------------------------------------------------------
# attention


def attention(q, k, v, allowed: np.ndarray | None, num_heads: int, return_weights: bool = False):
    """Scaled dot-product attention over ``num_heads`` heads.

    q: (B, Lq, d); k, v: (B, Lk, d); ``allowed`` is a boolean array
    broadcastable to (B, Lq, Lk) where False entries get zero weight.
    Heads are split from and merged back into the model axis.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    B, Lq, d = q.shape
    Lk = k.shape[1]
    if d % num_heads:
        raise ValueError(f"model dim {d} not divisible by {num_heads} heads")
    if allowed is not None:
        allowed = np.asarray(allowed, dtype=bool)
        try:
            np.broadcast_shapes(allowed.shape, (B, Lq, Lk))
        except ValueError:
            raise ValueError(f"mask shape {allowed.shape} incompatible with attention shape {(B, Lq, Lk)}") from None
    dh = d // num_heads
    sc = 1.0 / np.sqrt(dh)
    qh = q.data.reshape(B, Lq, num_heads, dh).transpose(0, 2, 1, 3)
    kh = k.data.reshape(B, Lk, num_heads, dh).transpose(0, 2, 1, 3)
    vh = v.data.reshape(B, Lk, num_heads, dh).transpose(0, 2, 1, 3)
    s = (qh @ kh.transpose(0, 1, 3, 2)) * sc
    if allowed is not None:
        s = np.where(allowed[:, None] if allowed.ndim == 3 else allowed, s, _NEG)
    p = kernels.softmax_fwd(np.ascontiguousarray(s), 1.0)
    oh = p @ vh
    out = oh.transpose(0, 2, 1, 3).reshape(B, Lq, d)

    def bwd(g):
        gh = g.reshape(B, Lq, num_heads, dh).transpose(0, 2, 1, 3)
        dp = gh @ vh.transpose(0, 1, 3, 2)
        dv = p.transpose(0, 1, 3, 2) @ gh
        ds = kernels.softmax_bwd(p, dp, 1.0) * sc
        dq = ds @ kh
        dk = ds.transpose(0, 1, 3, 2) @ qh
        merge = lambda t, L: t.transpose(0, 2, 1, 3).reshape(B, L, d)  # noqa: E731
        return merge(dq, Lq), merge(dk, Lk), merge(dv, Lk)

    res = make_result("attention", out, (q, k, v), bwd)
    if return_weights:
        return res, p
    return res


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits, targets, mask: np.ndarray | None = None, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of integer ``targets`` under ``softmax(logits)``.

    ``mask`` (same shape as targets) excludes positions. ``reduction`` is
    "mean" (over included positions), "sum", or "none".
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    V = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise ValueError(f"target id out of range [0, {V})")
    x = np.ascontiguousarray(logits.data)
    lse = kernels.logsumexp(x)
    picked = np.take_along_axis(x, targets[..., None], axis=-1)[..., 0]
    per = lse - picked
    w = np.ones(per.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    if reduction == "mean":
        denom = max(w.sum(), 1.0)
        out = np.asarray((per * w).sum() / denom)
        coef = w / denom
    elif reduction == "sum":
        out = np.asarray((per * w).sum())
        coef = w
    elif reduction == "none":
        out = per * w
        coef = None
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def bwd(g):
        p = np.exp(x - lse[..., None])
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        scale_ = g * coef if coef is not None else g * w
        return ((p - onehot) * scale_[..., None],)

    return make_result("cross_entropy", out, (logits,), bwd)
