"""Pure numpy convolution kernels.

Forward passes are expressed as windowed tensor contractions (BLAS-backed),
input gradients as a scatter-add over the kernel taps. Inputs are assumed
pre-validated; shapes follow the NCHW / OIkk convention.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(xp, kh, kw, stride):
    # (N, C, OH, OW, kh, kw) view over the padded input
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, stride, padding):
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(_pad(x, padding), kh, kw, stride)
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_backward(x, w, dy, stride, padding):
    n, c, h, width = x.shape
    kh, kw = w.shape[2], w.shape[3]
    oh, ow = dy.shape[2], dy.shape[3]
    xp = _pad(x, padding)
    win = _windows(xp, kh, kw, stride)

    dw = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))

    dxp = np.zeros_like(xp)
    for ki in range(kh):
        for kj in range(kw):
            tap = np.tensordot(dy, w[:, :, ki, kj], axes=([1], [0]))
            dxp[:, :, ki:ki + stride * oh:stride,
                kj:kj + stride * ow:stride] += tap.transpose(0, 3, 1, 2)
    dx = dxp[:, :, padding:padding + h, padding:padding + width]
    return np.ascontiguousarray(dx), dw


def depthwise_forward(x, w, stride, padding):
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(_pad(x, padding), kh, kw, stride)
    return np.einsum("nchwij,cij->nchw", win, w[:, 0], optimize=True)


def depthwise_backward(x, w, dy, stride, padding):
    n, c, h, width = x.shape
    kh, kw = w.shape[2], w.shape[3]
    oh, ow = dy.shape[2], dy.shape[3]
    xp = _pad(x, padding)
    win = _windows(xp, kh, kw, stride)

    dw = np.einsum("nchw,nchwij->cij", dy, win, optimize=True)[:, None]

    dxp = np.zeros_like(xp)
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, :, ki:ki + stride * oh:stride,
                kj:kj + stride * ow:stride] += dy * w[None, :, 0, ki, kj, None, None]
    dx = dxp[:, :, padding:padding + h, padding:padding + width]
    return np.ascontiguousarray(dx), dw
