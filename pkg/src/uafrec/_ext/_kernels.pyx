# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels (see ``_kernels_py`` for semantics)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

ctypedef fused real:
    float
    double


def causal_im2col(real[:, :, ::1] x, int kernel, int dilation):
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t b, t, j, ch, src, shift
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((B, n, kernel * c), dtype=dtype)
    cdef real[:, :, ::1] cols = out
    with nogil:
        for b in range(B):
            for t in range(n):
                for j in range(kernel):
                    shift = (kernel - 1 - j) * dilation
                    src = t - shift
                    if src < 0:
                        continue
                    for ch in range(c):
                        cols[b, t, j * c + ch] = x[b, src, ch]
    return out


def causal_col2im(real[:, :, ::1] gcols, int kernel, int dilation):
    cdef Py_ssize_t B = gcols.shape[0], n = gcols.shape[1]
    cdef Py_ssize_t c = gcols.shape[2] // kernel
    cdef Py_ssize_t b, t, j, ch, src, shift
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((B, n, c), dtype=dtype)
    cdef real[:, :, ::1] gx = out
    with nogil:
        for b in range(B):
            for t in range(n):
                for j in range(kernel):
                    shift = (kernel - 1 - j) * dilation
                    src = t - shift
                    if src < 0:
                        continue
                    for ch in range(c):
                        gx[b, src, ch] += gcols[b, t, j * c + ch]
    return out


def layer_norm_forward(real[:, ::1] x, real[::1] gain, real[::1] bias, double eps):
    cdef Py_ssize_t M = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t i, ch
    cdef double mu, var, d, r
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty((M, c), dtype=dtype)
    xhat_arr = np.empty((M, c), dtype=dtype)
    rstd_arr = np.empty(M, dtype=dtype)
    cdef real[:, ::1] y = y_arr
    cdef real[:, ::1] xhat = xhat_arr
    cdef real[::1] rstd = rstd_arr
    with nogil:
        for i in range(M):
            mu = 0.0
            for ch in range(c):
                mu += x[i, ch]
            mu /= c
            var = 0.0
            for ch in range(c):
                d = x[i, ch] - mu
                var += d * d
            var /= c
            r = 1.0 / sqrt(var + eps)
            rstd[i] = <real>r
            for ch in range(c):
                d = (x[i, ch] - mu) * r
                xhat[i, ch] = <real>d
                y[i, ch] = <real>(d * gain[ch] + bias[ch])
    return y_arr, xhat_arr, rstd_arr


def layer_norm_backward(real[:, ::1] g, real[:, ::1] xhat, real[::1] rstd, real[::1] gain):
    cdef Py_ssize_t M = g.shape[0], c = g.shape[1]
    cdef Py_ssize_t i, ch
    cdef double m1, m2, gh
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.empty((M, c), dtype=dtype)
    gg_acc = np.zeros(c, dtype=np.float64)
    gb_acc = np.zeros(c, dtype=np.float64)
    cdef real[:, ::1] gx = gx_arr
    cdef double[::1] ggain = gg_acc
    cdef double[::1] gbias = gb_acc
    with nogil:
        for i in range(M):
            m1 = 0.0
            m2 = 0.0
            for ch in range(c):
                gh = g[i, ch] * gain[ch]
                m1 += gh
                m2 += gh * xhat[i, ch]
                ggain[ch] += g[i, ch] * xhat[i, ch]
                gbias[ch] += g[i, ch]
            m1 /= c
            m2 /= c
            for ch in range(c):
                gh = g[i, ch] * gain[ch]
                gx[i, ch] = <real>((gh - m1 - xhat[i, ch] * m2) * rstd[i])
    return gx_arr, gg_acc.astype(dtype), gb_acc.astype(dtype)


def embedding_backward(cnp.int64_t[::1] ids, real[:, ::1] g, Py_ssize_t vocab):
    cdef Py_ssize_t M = g.shape[0], c = g.shape[1]
    cdef Py_ssize_t i, ch, row
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((vocab, c), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    for i in range(M):
        row = ids[i]
        if row < 0 or row >= vocab:
            raise IndexError(f"id {row} outside [0, {vocab})")
    with nogil:
        for i in range(M):
            row = ids[i]
            for ch in range(c):
                out[row, ch] += g[i, ch]
    return out_arr
