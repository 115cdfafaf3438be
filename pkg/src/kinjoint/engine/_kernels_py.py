"""Pure numpy implementations of the convolution and pooling kernels.

These are the reference path; the compiled module ``_kernels`` exposes the
same four functions with identical semantics.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """Unfold an NCHW array into a (N*OH*OW, C*kh*kw) patch matrix."""
    n, c, h, w = x.shape
    oh = _out_size(h, kh, stride, pad)
    ow = _out_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, : oh * stride : stride, : ow * stride : stride]
    # (N, C, OH, OW, kh, kw) -> (N, OH, OW, C, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * oh * ow, c * kh * kw
    )


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to NCHW."""
    n, c, h, w = x_shape
    oh = _out_size(h, kh, stride, pad)
    ow = _out_size(w, kw, stride, pad)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    g = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for u in range(kh):
        for v in range(kw):
            dxp[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride] += g[
                :, :, :, :, u, v
            ]
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad].copy()
    return dxp


def maxpool_forward(x, k, stride):
    """Max pooling without padding; returns (out, argmax) with argmax = u*k + v.

    Ties resolve to the first maximum in row-major window order.
    """
    n, c, h, w = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, : oh * stride : stride, : ow * stride : stride].reshape(
        n, c, oh, ow, k * k
    )
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool_backward(gout, arg, x_shape, k, stride):
    n, c, h, w = x_shape
    oh, ow = gout.shape[2], gout.shape[3]
    dx = np.zeros(x_shape, dtype=gout.dtype)
    for u in range(k):
        for v in range(k):
            hit = arg == (u * k + v)
            dx[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride] += np.where(
                hit, gout, 0.0
            )
    return dx
