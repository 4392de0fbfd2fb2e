# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport sqrt

cnp.import_array()


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w, floating[::1] b):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t Ho = H - K + 1, Wo = W - K + 1
    cdef Py_ssize_t n, o, c, ki, kj, i, j
    cdef floating wv
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((B, O, Ho, Wo), dtype=dtype)
    cdef floating[:, :, :, ::1] y = out
    with nogil:
        for n in range(B):
            for o in range(O):
                for i in range(Ho):
                    for j in range(Wo):
                        y[n, o, i, j] = b[o]
                for c in range(C):
                    for ki in range(K):
                        for kj in range(K):
                            wv = w[o, c, ki, kj]
                            for i in range(Ho):
                                for j in range(Wo):
                                    y[n, o, i, j] += wv * x[n, c, i + ki, j + kj]
    return out


def conv2d_backward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w, floating[:, :, :, ::1] dy):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t Ho = dy.shape[2], Wo = dy.shape[3]
    cdef Py_ssize_t n, o, c, ki, kj, i, j
    cdef floating acc, wv
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.zeros((B, C, H, W), dtype=dtype)
    dw_arr = np.zeros((O, C, K, K), dtype=dtype)
    db_arr = np.zeros(O, dtype=dtype)
    cdef floating[:, :, :, ::1] dx = dx_arr
    cdef floating[:, :, :, ::1] dw = dw_arr
    cdef floating[::1] db = db_arr
    with nogil:
        for o in range(O):
            acc = 0
            for n in range(B):
                for i in range(Ho):
                    for j in range(Wo):
                        acc = acc + dy[n, o, i, j]
            db[o] = acc
        for o in range(O):
            for c in range(C):
                for ki in range(K):
                    for kj in range(K):
                        acc = 0
                        wv = w[o, c, ki, kj]
                        for n in range(B):
                            for i in range(Ho):
                                for j in range(Wo):
                                    acc = acc + dy[n, o, i, j] * x[n, c, i + ki, j + kj]
                                    dx[n, c, i + ki, j + kj] += dy[n, o, i, j] * wv
                        dw[o, c, ki, kj] = acc
    return dx_arr, dw_arr, db_arr


def maxpool_forward(floating[:, :, :, ::1] x, Py_ssize_t p):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = H // p, Wo = W // p
    cdef Py_ssize_t n, c, i, j, a, bb, r, q, best_idx
    cdef floating best, v
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((B, C, Ho, Wo), dtype=dtype)
    idx_arr = np.empty((B, C, Ho, Wo), dtype=np.int64)
    cdef floating[:, :, :, ::1] y = out
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    with nogil:
        for n in range(B):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        r = i * p
                        q = j * p
                        best = x[n, c, r, q]
                        best_idx = r * W + q
                        for a in range(p):
                            for bb in range(p):
                                v = x[n, c, r + a, q + bb]
                                if v > best:
                                    best = v
                                    best_idx = (r + a) * W + q + bb
                        y[n, c, i, j] = best
                        idx[n, c, i, j] = best_idx
    return out, idx_arr


def maxpool_backward(floating[:, :, :, ::1] dy, cnp.int64_t[:, :, :, ::1] idx, in_shape):
    cdef Py_ssize_t B = in_shape[0], C = in_shape[1], H = in_shape[2], W = in_shape[3]
    cdef Py_ssize_t Ho = dy.shape[2], Wo = dy.shape[3]
    cdef Py_ssize_t n, c, i, j, f
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.zeros((B, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = dx_arr
    with nogil:
        for n in range(B):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        f = idx[n, c, i, j]
                        dx[n, c, f // W, f % W] += dy[n, c, i, j]
    return dx_arr


def pegasos(double[:, ::1] X, double[::1] y, double lam, cnp.int64_t[::1] order, double[::1] w):
    cdef Py_ssize_t T = order.shape[0], d = X.shape[1]
    cdef Py_ssize_t t, k, i
    cdef double margin, eta, shrink, norm, radius = 1.0 / sqrt(lam)
    with nogil:
        for t in range(1, T + 1):
            i = order[t - 1]
            margin = 0
            for k in range(d):
                margin += w[k] * X[i, k]
            margin *= y[i]
            eta = 1.0 / (lam * t)
            shrink = 1.0 - 1.0 / t
            for k in range(d):
                w[k] *= shrink
            if margin < 1.0:
                for k in range(d):
                    w[k] += (eta * y[i]) * X[i, k]
            norm = 0
            for k in range(d):
                norm += w[k] * w[k]
            norm = sqrt(norm)
            if norm > radius:
                for k in range(d):
                    w[k] *= radius / norm
    return np.asarray(w)
