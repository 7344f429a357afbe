# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused kernels; same signatures and results as ``_pykernels``.

wraparound is off module-wide, so no negative indices anywhere (including
on Python tuples).

Every kernel flattens its input to (rows, n) and reduces over the last axis
in one pass per row, avoiding the temporaries numpy needs.
"""

import numpy as np
from libc.math cimport exp, log, sqrt, tanh

cdef double GELU_C = 0.7978845608028654  # sqrt(2 / pi)
cdef double GELU_A = 0.044715


def _rows(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    return x.reshape(-1, x.shape[x.ndim - 1]) if x.ndim else x.reshape(1, 1)


def softmax_fwd(x, double inv_t):
    shape = np.shape(x)
    cdef double[:, ::1] a = _rows(x)
    out = np.empty((a.shape[0], a.shape[1]))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, n = a.shape[1]
    cdef double m, s, v
    with nogil:
        for i in range(a.shape[0]):
            m = a[i, 0] * inv_t
            for j in range(1, n):
                v = a[i, j] * inv_t
                if v > m:
                    m = v
            s = 0.0
            for j in range(n):
                v = exp(a[i, j] * inv_t - m)
                o[i, j] = v
                s += v
            s = 1.0 / s
            for j in range(n):
                o[i, j] *= s
    return out.reshape(shape)


def softmax_bwd(p, g, double inv_t):
    shape = np.shape(p)
    cdef double[:, ::1] pp = _rows(p)
    cdef double[:, ::1] gg = _rows(g)
    out = np.empty((pp.shape[0], pp.shape[1]))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, n = pp.shape[1]
    cdef double dot
    with nogil:
        for i in range(pp.shape[0]):
            dot = 0.0
            for j in range(n):
                dot += gg[i, j] * pp[i, j]
            for j in range(n):
                o[i, j] = pp[i, j] * (gg[i, j] - dot) * inv_t
    return out.reshape(shape)


def logsumexp(x):
    shape = np.shape(x)
    cdef double[:, ::1] a = _rows(x)
    out = np.empty(a.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i, j, n = a.shape[1]
    cdef double m, s
    with nogil:
        for i in range(a.shape[0]):
            m = a[i, 0]
            for j in range(1, n):
                if a[i, j] > m:
                    m = a[i, j]
            s = 0.0
            for j in range(n):
                s += exp(a[i, j] - m)
            o[i] = log(s) + m
    return out.reshape(shape[: len(shape) - 1])


def layer_norm_fwd(x, gamma, beta, double eps):
    shape = np.shape(x)
    cdef double[:, ::1] a = _rows(x)
    cdef double[::1] gm = np.ascontiguousarray(gamma, dtype=np.float64).ravel()
    cdef double[::1] bt = np.ascontiguousarray(beta, dtype=np.float64).ravel()
    cdef Py_ssize_t rows = a.shape[0], n = a.shape[1], i, j
    y = np.empty((rows, n))
    xhat = np.empty((rows, n))
    rstd = np.empty((rows, 1))
    cdef double[:, ::1] yv = y
    cdef double[:, ::1] hv = xhat
    cdef double[:, ::1] rv = rstd
    cdef double mu, var, r, c
    with nogil:
        for i in range(rows):
            mu = 0.0
            for j in range(n):
                mu += a[i, j]
            mu /= n
            var = 0.0
            for j in range(n):
                c = a[i, j] - mu
                var += c * c
            r = 1.0 / sqrt(var / n + eps)
            rv[i, 0] = r
            for j in range(n):
                c = (a[i, j] - mu) * r
                hv[i, j] = c
                yv[i, j] = c * gm[j] + bt[j]
    lead = shape[: len(shape) - 1]
    return y.reshape(shape), xhat.reshape(shape), rstd.reshape(lead + (1,))


def layer_norm_bwd(g, xhat, rstd, gamma):
    shape = np.shape(g)
    cdef double[:, ::1] gg = _rows(g)
    cdef double[:, ::1] hv = _rows(xhat)
    cdef double[::1] rv = np.ascontiguousarray(rstd, dtype=np.float64).ravel()
    cdef double[::1] gm = np.ascontiguousarray(gamma, dtype=np.float64).ravel()
    cdef Py_ssize_t rows = gg.shape[0], n = gg.shape[1], i, j
    dx = np.empty((rows, n))
    dgamma = np.zeros(n)
    dbeta = np.zeros(n)
    cdef double[:, ::1] dv = dx
    cdef double[::1] dg = dgamma
    cdef double[::1] db = dbeta
    cdef double m1, m2, d
    with nogil:
        for i in range(rows):
            m1 = 0.0
            m2 = 0.0
            for j in range(n):
                d = gg[i, j] * gm[j]
                m1 += d
                m2 += d * hv[i, j]
                dg[j] += gg[i, j] * hv[i, j]
                db[j] += gg[i, j]
            m1 /= n
            m2 /= n
            for j in range(n):
                dv[i, j] = rv[i] * (gg[i, j] * gm[j] - m1 - hv[i, j] * m2)
    return dx.reshape(shape), dgamma.reshape(np.shape(gamma)), dbeta.reshape(np.shape(gamma))


def gelu_fwd(x):
    shape = np.shape(x)
    cdef double[::1] a = np.ascontiguousarray(x, dtype=np.float64).ravel()
    out = np.empty(a.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef double v
    with nogil:
        for i in range(a.shape[0]):
            v = a[i]
            o[i] = 0.5 * v * (1.0 + tanh(GELU_C * (v + GELU_A * v * v * v)))
    return out.reshape(shape)


def gelu_bwd(g, x):
    shape = np.shape(x)
    cdef double[::1] gg = np.ascontiguousarray(g, dtype=np.float64).ravel()
    cdef double[::1] a = np.ascontiguousarray(x, dtype=np.float64).ravel()
    out = np.empty(a.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef double v, v2, t
    with nogil:
        for i in range(a.shape[0]):
            v = a[i]
            v2 = v * v
            t = tanh(GELU_C * (v + GELU_A * v2 * v))
            o[i] = gg[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v2))
    return out.reshape(shape)
