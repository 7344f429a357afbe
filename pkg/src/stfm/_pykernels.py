"""Pure-numpy fused kernels (the fallback backend).

Each function mirrors one in ``_ckernels.pyx``; both operate on contiguous
float64 arrays and reduce over the last axis.
"""

import numpy as np

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def softmax_fwd(x, inv_t):
    z = x * inv_t if inv_t != 1.0 else x.copy()
    z -= z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def softmax_bwd(p, g, inv_t):
    dot = (g * p).sum(axis=-1, keepdims=True)
    dx = p * (g - dot)
    if inv_t != 1.0:
        dx *= inv_t
    return dx


def logsumexp(x):
    m = x.max(axis=-1, keepdims=True)
    return (np.log(np.exp(x - m).sum(axis=-1, keepdims=True)) + m)[..., 0]


def layer_norm_fwd(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd


def layer_norm_bwd(g, xhat, rstd, gamma):
    dxhat = g * gamma
    n = xhat.shape[-1]
    m1 = dxhat.sum(axis=-1, keepdims=True) / n
    m2 = (dxhat * xhat).sum(axis=-1, keepdims=True) / n
    dx = rstd * (dxhat - m1 - xhat * m2)
    lead = tuple(range(g.ndim - 1))
    return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)


def gelu_fwd(x):
    t = np.tanh(_GELU_C * (x + _GELU_A * x * x * x))
    return 0.5 * x * (1.0 + t)


def gelu_bwd(g, x):
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
    return g * (0.5 * (1.0 + t) + 0.5 * x * dt)
