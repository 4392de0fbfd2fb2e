"""Kernel backend selection.

The compiled Cython module is used when it imports; otherwise the numpy
fallback is used. ``VOX_BACKEND=python`` forces the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("VOX_BACKEND", "").lower() not in ("python", "py", "numpy"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py


def backends():
    """Mapping of available backend name -> kernel module."""
    out = {"python": _kernels_py}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


def conv2d_forward(x, w, b):
    return _impl.conv2d_forward(np.ascontiguousarray(x), np.ascontiguousarray(w), np.ascontiguousarray(b))


def conv2d_backward(x, w, dy):
    return _impl.conv2d_backward(np.ascontiguousarray(x), np.ascontiguousarray(w), np.ascontiguousarray(dy))


def maxpool_forward(x, p):
    return _impl.maxpool_forward(np.ascontiguousarray(x), int(p))


def maxpool_backward(dy, idx, in_shape):
    return _impl.maxpool_backward(np.ascontiguousarray(dy), np.ascontiguousarray(idx, dtype=np.int64),
                                  tuple(in_shape))


def pegasos(X, y, lam, order, w):
    return _impl.pegasos(np.ascontiguousarray(X, dtype=np.float64), np.ascontiguousarray(y, dtype=np.float64),
                         float(lam), np.ascontiguousarray(order, dtype=np.int64),
                         np.ascontiguousarray(w, dtype=np.float64))
