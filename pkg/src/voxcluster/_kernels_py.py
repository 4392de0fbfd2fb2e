"""Pure numpy implementations of the hot kernels.

Array layout is (batch, channels, height, width) throughout. The compiled
module ``_ckernels`` exposes the same functions with the same semantics.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b):
    k = w.shape[2]
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # B,C,H',W',k,k
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # B,H',W',O
    y = y.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return np.ascontiguousarray(y, dtype=x.dtype)


def conv2d_backward(x, w, dy):
    """Gradients (dx, dw, db) of a valid cross-correlation."""
    k = w.shape[2]
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    dw = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))  # O,C,k,k
    db = dy.sum(axis=(0, 2, 3))
    padded = np.pad(dy, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    pwin = sliding_window_view(padded, (k, k), axis=(2, 3))  # B,O,H,W,k,k
    dx = np.tensordot(pwin, w[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3]))  # B,H,W,C
    dx = dx.transpose(0, 3, 1, 2)
    return (np.ascontiguousarray(dx, dtype=x.dtype), dw.astype(x.dtype, copy=False),
            db.astype(x.dtype, copy=False))


def maxpool_forward(x, p):
    """Non-overlapping p x p max pooling; returns (out, flat argmax within each H*W plane)."""
    B, C, H, W = x.shape
    ho, wo = H // p, W // p
    blocks = x[:, :, :ho * p, :wo * p].reshape(B, C, ho, p, wo, p).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(B, C, ho, wo, p * p)
    a = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, a[..., None], axis=-1)[..., 0]
    rows = np.arange(ho)[:, None] * p + a // p
    cols = np.arange(wo)[None, :] * p + a % p
    return np.ascontiguousarray(out), (rows * W + cols).astype(np.int64)


def maxpool_backward(dy, idx, in_shape):
    B, C, H, W = in_shape
    dx = np.zeros((B, C, H * W), dtype=dy.dtype)
    np.put_along_axis(dx, idx.reshape(B, C, -1), dy.reshape(B, C, -1), axis=2)
    return dx.reshape(in_shape)


def pegasos(X, y, lam, order, w):
    """Per-sample Pegasos updates in ``order``; ``w`` is updated in place and returned."""
    radius = 1.0 / np.sqrt(lam)
    for t, i in enumerate(order, start=1):
        xi = X[i]
        margin = y[i] * np.dot(w, xi)
        eta = 1.0 / (lam * t)
        w *= 1.0 - 1.0 / t
        if margin < 1.0:
            w += (eta * y[i]) * xi
        norm = np.sqrt(np.dot(w, w))
        if norm > radius:
            w *= radius / norm
    return w
