# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution and pooling kernels.

Same contract as ``_kernels_py``; only float32/float64 inputs are accepted.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


cdef inline Py_ssize_t _out_size(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad) nogil:
    return (size + 2 * pad - k) // stride + 1


def _im2col(const floating[:, :, :, ::1] x, floating[:, ::1] cols,
            Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = _out_size(h, kh, stride, pad)
    cdef Py_ssize_t ow = _out_size(w, kw, stride, pad)
    cdef Py_ssize_t b, i, j, ch, u, v, row, col, y, xx
    with nogil:
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    row = (b * oh + i) * ow + j
                    col = 0
                    for ch in range(c):
                        for u in range(kh):
                            y = i * stride + u - pad
                            for v in range(kw):
                                xx = j * stride + v - pad
                                if 0 <= y < h and 0 <= xx < w:
                                    cols[row, col] = x[b, ch, y, xx]
                                else:
                                    cols[row, col] = 0
                                col += 1


def im2col(x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    oh = _out_size(h, kh, stride, pad)
    ow = _out_size(w, kw, stride, pad)
    cols = np.empty((n * oh * ow, c * kh * kw), dtype=x.dtype)
    _im2col(x, cols, kh, kw, stride, pad)
    return cols


def _col2im(const floating[:, ::1] cols, floating[:, :, :, ::1] dx,
            Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = dx.shape[0], c = dx.shape[1], h = dx.shape[2], w = dx.shape[3]
    cdef Py_ssize_t oh = _out_size(h, kh, stride, pad)
    cdef Py_ssize_t ow = _out_size(w, kw, stride, pad)
    cdef Py_ssize_t b, i, j, ch, u, v, row, col, y, xx
    with nogil:
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    row = (b * oh + i) * ow + j
                    col = 0
                    for ch in range(c):
                        for u in range(kh):
                            y = i * stride + u - pad
                            for v in range(kw):
                                xx = j * stride + v - pad
                                if 0 <= y < h and 0 <= xx < w:
                                    dx[b, ch, y, xx] += cols[row, col]
                                col += 1


def col2im(cols, x_shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cols = np.ascontiguousarray(cols)
    dx = np.zeros(tuple(x_shape), dtype=cols.dtype)
    _col2im(cols, dx, kh, kw, stride, pad)
    return dx


def _maxpool_fwd(const floating[:, :, :, ::1] x, floating[:, :, :, ::1] out,
                 cnp.int64_t[:, :, :, ::1] arg, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1], oh = out.shape[2], ow = out.shape[3]
    cdef Py_ssize_t b, ch, i, j, u, v, best_idx
    cdef floating best, val
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        best = x[b, ch, i * stride, j * stride]
                        best_idx = 0
                        for u in range(k):
                            for v in range(k):
                                val = x[b, ch, i * stride + u, j * stride + v]
                                if val > best:
                                    best = val
                                    best_idx = u * k + v
                        out[b, ch, i, j] = best
                        arg[b, ch, i, j] = best_idx


def maxpool_forward(x, Py_ssize_t k, Py_ssize_t stride):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    arg = np.empty((n, c, oh, ow), dtype=np.int64)
    _maxpool_fwd(x, out, arg, k, stride)
    return out, arg


def _maxpool_bwd(const floating[:, :, :, ::1] gout, const cnp.int64_t[:, :, :, ::1] arg,
                 floating[:, :, :, ::1] dx, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = gout.shape[0], c = gout.shape[1], oh = gout.shape[2], ow = gout.shape[3]
    cdef Py_ssize_t b, ch, i, j, a
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        a = arg[b, ch, i, j]
                        dx[b, ch, i * stride + a // k, j * stride + a % k] += gout[b, ch, i, j]


def maxpool_backward(gout, arg, x_shape, Py_ssize_t k, Py_ssize_t stride):
    gout = np.ascontiguousarray(gout)
    arg = np.ascontiguousarray(arg, dtype=np.int64)
    dx = np.zeros(tuple(x_shape), dtype=gout.dtype)
    _maxpool_bwd(gout, arg, dx, k, stride)
    return dx
