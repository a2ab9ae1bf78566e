# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled patch extraction (im2col) and its adjoint scatter-add (col2im)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, int kh, int kw, int stride, int dilation, int oh, int ow):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, oh, ow, kh, kw, c), dtype=dtype)
    cdef real[:, :, :, :, :, ::1] cols = out
    cdef Py_ssize_t b, y, x, i, j, k, hy, wx
    with nogil:
        for b in range(n):
            for y in range(oh):
                for x in range(ow):
                    for i in range(kh):
                        hy = y * stride + i * dilation
                        for j in range(kw):
                            wx = x * stride + j * dilation
                            for k in range(c):
                                cols[b, y, x, i, j, k] = xp[b, hy, wx, k]
    return out


def col2im(real[:, :, :, :, :, ::1] cols, int hp, int wp, int stride, int dilation):
    cdef Py_ssize_t n = cols.shape[0], oh = cols.shape[1], ow = cols.shape[2]
    cdef Py_ssize_t kh = cols.shape[3], kw = cols.shape[4], c = cols.shape[5]
    dtype = np.float32 if real is float else np.float64
    res = np.zeros((n, hp, wp, c), dtype=dtype)
    cdef real[:, :, :, ::1] out = res
    cdef Py_ssize_t b, y, x, i, j, k, hy, wx
    with nogil:
        for b in range(n):
            for y in range(oh):
                for x in range(ow):
                    for i in range(kh):
                        hy = y * stride + i * dilation
                        for j in range(kw):
                            wx = x * stride + j * dilation
                            for k in range(c):
                                out[b, hy, wx, k] += cols[b, y, x, i, j, k]
    return res
