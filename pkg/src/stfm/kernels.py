"""Backend selection for the fused numeric kernels.

The compiled extension ``stfm._ckernels`` is used when it imports cleanly;
otherwise the numpy implementations in ``stfm._pykernels`` are used. Setting
``STFM_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _pykernels

python_backend = _pykernels

if os.environ.get("STFM_PURE_PYTHON", "") not in ("", "0"):
    compiled_backend = None
else:
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if _impl is compiled_backend else "python"


def use_backend(name: str) -> None:
    """Switch backends at runtime ("python" or "cython")."""
    global _impl, BACKEND
    if name == "python":
        _impl = python_backend
    elif name == "cython":
        if compiled_backend is None:
            raise RuntimeError("compiled kernels are not available in this install")
        _impl = compiled_backend
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def softmax_fwd(x, inv_t):
    return _impl.softmax_fwd(x, inv_t)


def softmax_bwd(p, g, inv_t):
    return _impl.softmax_bwd(p, g, inv_t)


def logsumexp(x):
    return _impl.logsumexp(x)


def layer_norm_fwd(x, gamma, beta, eps):
    return _impl.layer_norm_fwd(x, gamma, beta, eps)


def layer_norm_bwd(g, xhat, rstd, gamma):
    return _impl.layer_norm_bwd(g, xhat, rstd, gamma)


def gelu_fwd(x):
    return _impl.gelu_fwd(x)


def gelu_bwd(g, x):
    return _impl.gelu_bwd(g, x)
