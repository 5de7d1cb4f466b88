"""Hot inner loops of the tensor engine (im2col, depthwise conv, max-pool).

Two interchangeable backends exist: ``numba`` (compiled loops, default when
numba imports) and ``numpy`` (vectorised slicing). The environment variable
``HIERNAS_KERNELS`` picks one at import time; :func:`use` switches at runtime.
"""

import os

from . import _numpy

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _numba = None

__all__ = [
    "available",
    "backend",
    "use",
    "im2col",
    "col2im",
    "depthwise_conv",
    "depthwise_conv_grad",
    "maxpool",
    "maxpool_grad",
]

_BACKENDS = {"numpy": _numpy}
if _numba is not None:
    _BACKENDS["numba"] = _numba

_impl = _numpy
_name = "numpy"


def available():
    return sorted(_BACKENDS)


def backend():
    return _name


def use(name):
    """Select the kernel backend by name; returns the previous one."""
    global _impl, _name
    name = name.lower()
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available()}")
    previous = _name
    _impl, _name = _BACKENDS[name], name
    return previous


_requested = os.environ.get("HIERNAS_KERNELS", "numba").strip().lower()
use(_requested if _requested in _BACKENDS else "numpy")


def im2col(xp, k, stride, dilation, out_h, out_w):
    return _impl.im2col(xp, k, stride, dilation, out_h, out_w)


def col2im(cols, height, width, stride, dilation):
    return _impl.col2im(cols, height, width, stride, dilation)


def depthwise_conv(xp, weight, stride, dilation, out_h, out_w):
    return _impl.depthwise_conv(xp, weight, stride, dilation, out_h, out_w)


def depthwise_conv_grad(xp, weight, grad_out, stride, dilation):
    return _impl.depthwise_conv_grad(xp, weight, grad_out, stride, dilation)


def maxpool(xp, k, stride, out_h, out_w):
    return _impl.maxpool(xp, k, stride, out_h, out_w)


def maxpool_grad(grad_out, idx, k, stride, height, width):
    return _impl.maxpool_grad(grad_out, idx, k, stride, height, width)
