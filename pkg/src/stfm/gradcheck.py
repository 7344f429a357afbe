"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``x.data``."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def analytic_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.grad = None
    with Tape():
        loss = fn()
        backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    floor: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between backprop and central differences.

    With ``max_entries`` set, only that many randomly chosen coordinates per
    input are probed (the analytic side is still computed in full).
    """
    ana = analytic_grads(fn, inputs)
    worst = 0.0
    for t, a in zip(inputs, ana):
        if max_entries is None or t.size <= max_entries:
            n = numeric_grad(fn, t, h)
            worst = max(worst, relative_error(a, n, floor))
            continue
        rng = rng if rng is not None else np.random.default_rng(0)
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=max_entries, replace=False)
        nums, anas = [], []
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data)
            flat[i] = orig - h
            fm = float(fn().data)
            flat[i] = orig
            nums.append((fp - fm) / (2.0 * h))
            anas.append(a.reshape(-1)[i])
        worst = max(worst, relative_error(np.array(anas), np.array(nums), floor))
    return worst
