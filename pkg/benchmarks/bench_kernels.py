"""Compare the compiled and numpy kernel backends.

Times each fused kernel on training-sized arrays, then one full training
iteration of the desk configuration under each backend.

    python3 benchmarks/bench_kernels.py [--repeat N] [--iters N]
"""

import argparse
import time

import numpy as np

from stfm import _pykernels, kernels
from stfm.data import SyntheticTaskSpec, generate_synthetic
from stfm.training import Trainer, TrainingConfig
from stfm.transformer import TransformerConfig


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    x = rng.normal(size=(64, 16, 128))  # feed-forward activations
    h = rng.normal(size=(64, 16, 64))  # residual stream
    s = rng.normal(size=(64, 2, 16, 16))  # attention scores
    v = rng.normal(size=(64, 1, 120))  # per-step vocabulary logits
    g64 = rng.normal(size=64)
    b64 = rng.normal(size=64)
    _, xhat, rstd = _pykernels.layer_norm_fwd(h, g64, b64, 1e-5)
    p = _pykernels.softmax_fwd(s, 1.0)
    return {
        "gelu_fwd": lambda k: k.gelu_fwd(x),
        "gelu_bwd": lambda k: k.gelu_bwd(x, x),
        "layer_norm_fwd": lambda k: k.layer_norm_fwd(h, g64, b64, 1e-5),
        "layer_norm_bwd": lambda k: k.layer_norm_bwd(h, xhat, rstd, g64),
        "softmax_fwd": lambda k: k.softmax_fwd(s, 1.0),
        "softmax_bwd": lambda k: k.softmax_bwd(p, s, 1.0),
        "logsumexp": lambda k: k.logsumexp(v),
    }


def training_iteration(backend, iters):
    kernels.use_backend(backend)
    task = generate_synthetic(SyntheticTaskSpec())
    trainer = Trainer(TransformerConfig(len(task.vocab)), TrainingConfig(batch_size=32), task.corpora)
    trainer.step()  # warm-up
    t0 = time.perf_counter()
    for _ in range(iters):
        trainer.step()
    return (time.perf_counter() - t0) / iters


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--iters", type=int, default=3)
    args = ap.parse_args()
    if kernels.compiled_backend is None:
        raise SystemExit("compiled kernels are not built; install with the extension to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for name, fn in kernel_cases(rng).items():
        tp = best_of(lambda: fn(kernels.python_backend), args.repeat)
        tc = best_of(lambda: fn(kernels.compiled_backend), args.repeat)
        print(f"{name:<16}{1e3 * tp:>10.3f}{1e3 * tc:>11.3f}{tp / tc:>8.2f}x")
    tp = training_iteration("python", args.iters)
    tc = training_iteration("cython", args.iters)
    print(f"{'train iteration':<16}{1e3 * tp:>10.1f}{1e3 * tc:>11.1f}{tp / tc:>8.2f}x")


if __name__ == "__main__":
    main()
