# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels (single-threaded, deterministic loop order).

Same contracts as kernels.pure; float32 and float64 via fused types.
"""

import numpy as np

cimport cython


ctypedef fused floating:
    float
    double


cdef void _conv_fwd(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] w,
                    floating[:, :, :, ::1] y, Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t N = y.shape[0], O = y.shape[1], OH = y.shape[2], OW = y.shape[3]
    cdef Py_ssize_t C = w.shape[1], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t n, o, i, j, c, ki, kj
    cdef floating acc
    for n in range(N):
        for o in range(O):
            for i in range(OH):
                for j in range(OW):
                    acc = 0
                    for c in range(C):
                        for ki in range(KH):
                            for kj in range(KW):
                                acc = acc + xp[n, c, i * stride + ki, j * stride + kj] * w[o, c, ki, kj]
                    y[n, o, i, j] = acc


cdef void _conv_bwd(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] w,
                    floating[:, :, :, ::1] dy, floating[:, :, :, ::1] dxp,
                    floating[:, :, :, ::1] dw, Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t N = dy.shape[0], O = dy.shape[1], OH = dy.shape[2], OW = dy.shape[3]
    cdef Py_ssize_t C = w.shape[1], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t n, o, i, j, c, ki, kj
    cdef floating g
    for n in range(N):
        for o in range(O):
            for i in range(OH):
                for j in range(OW):
                    g = dy[n, o, i, j]
                    for c in range(C):
                        for ki in range(KH):
                            for kj in range(KW):
                                dxp[n, c, i * stride + ki, j * stride + kj] += g * w[o, c, ki, kj]
                                dw[o, c, ki, kj] += g * xp[n, c, i * stride + ki, j * stride + kj]


cdef void _dw_fwd(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] w,
                  floating[:, :, :, ::1] y, Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t N = y.shape[0], C = y.shape[1], OH = y.shape[2], OW = y.shape[3]
    cdef Py_ssize_t KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t n, c, i, j, ki, kj
    cdef floating acc
    for n in range(N):
        for c in range(C):
            for i in range(OH):
                for j in range(OW):
                    acc = 0
                    for ki in range(KH):
                        for kj in range(KW):
                            acc = acc + xp[n, c, i * stride + ki, j * stride + kj] * w[c, 0, ki, kj]
                    y[n, c, i, j] = acc


cdef void _dw_bwd(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] w,
                  floating[:, :, :, ::1] dy, floating[:, :, :, ::1] dxp,
                  floating[:, :, :, ::1] dw, Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t N = dy.shape[0], C = dy.shape[1], OH = dy.shape[2], OW = dy.shape[3]
    cdef Py_ssize_t KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t n, c, i, j, ki, kj
    cdef floating g
    for n in range(N):
        for c in range(C):
            for i in range(OH):
                for j in range(OW):
                    g = dy[n, c, i, j]
                    for ki in range(KH):
                        for kj in range(KW):
                            dxp[n, c, i * stride + ki, j * stride + kj] += g * w[c, 0, ki, kj]
                            dw[c, 0, ki, kj] += g * xp[n, c, i * stride + ki, j * stride + kj]


def _padded(x, Py_ssize_t padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _out_hw(Py_ssize_t h, Py_ssize_t w, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t padding):
    return (h + 2 * padding - k) // stride + 1, (w + 2 * padding - k) // stride + 1


def conv2d_forward(x, w, Py_ssize_t stride, Py_ssize_t padding):
    xp = _padded(x, padding)
    w = np.ascontiguousarray(w)
    oh, ow = _out_hw(x.shape[2], x.shape[3], w.shape[2], stride, padding)
    y = np.zeros((x.shape[0], w.shape[0], oh, ow), dtype=x.dtype)
    if x.dtype == np.float32:
        _conv_fwd[float](xp, w, y, stride)
    else:
        _conv_fwd[double](xp, w, y, stride)
    return y


def conv2d_backward(x, w, dy, Py_ssize_t stride, Py_ssize_t padding):
    xp = _padded(x, padding)
    w = np.ascontiguousarray(w)
    dy = np.ascontiguousarray(dy)
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    if x.dtype == np.float32:
        _conv_bwd[float](xp, w, dy, dxp, dw, stride)
    else:
        _conv_bwd[double](xp, w, dy, dxp, dw, stride)
    h, wd = x.shape[2], x.shape[3]
    dx = np.ascontiguousarray(dxp[:, :, padding:padding + h, padding:padding + wd])
    return dx, dw


def depthwise_forward(x, w, Py_ssize_t stride, Py_ssize_t padding):
    xp = _padded(x, padding)
    w = np.ascontiguousarray(w)
    oh, ow = _out_hw(x.shape[2], x.shape[3], w.shape[2], stride, padding)
    y = np.zeros((x.shape[0], x.shape[1], oh, ow), dtype=x.dtype)
    if x.dtype == np.float32:
        _dw_fwd[float](xp, w, y, stride)
    else:
        _dw_fwd[double](xp, w, y, stride)
    return y


def depthwise_backward(x, w, dy, Py_ssize_t stride, Py_ssize_t padding):
    xp = _padded(x, padding)
    w = np.ascontiguousarray(w)
    dy = np.ascontiguousarray(dy)
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    if x.dtype == np.float32:
        _dw_bwd[float](xp, w, dy, dxp, dw, stride)
    else:
        _dw_bwd[double](xp, w, dy, dxp, dw, stride)
    h, wd = x.shape[2], x.shape[3]
    dx = np.ascontiguousarray(dxp[:, :, padding:padding + h, padding:padding + wd])
    return dx, dw
