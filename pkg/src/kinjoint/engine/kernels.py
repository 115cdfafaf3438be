"""Backend selection for the convolution/pooling hot loops.

The compiled Cython module is used when it was built; otherwise the numpy
implementation is used. Setting ``KINJOINT_PURE_PYTHON=1`` forces the numpy
path. Both backends are deterministic, but their scatter-add orders differ, so
gradients may differ in the last bits between backends.
"""
import os

from . import _kernels_py

try:
    if os.environ.get("KINJOINT_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"numpy": _kernels_py}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "numpy"
_impl = _BACKENDS[BACKEND]


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available; have {available_backends()}") from None


def im2col(x, kh, kw, stride, pad):
    return _impl.im2col(x, kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride, pad):
    return _impl.col2im(cols, x_shape, kh, kw, stride, pad)


def maxpool_forward(x, k, stride):
    return _impl.maxpool_forward(x, k, stride)


def maxpool_backward(gout, arg, x_shape, k, stride):
    return _impl.maxpool_backward(gout, arg, x_shape, k, stride)
