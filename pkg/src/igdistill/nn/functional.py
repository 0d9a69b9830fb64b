"""Layer primitives: validated forward ops and their analytic backwards.

Every forward here has a matching backward whose gradients are held to
central finite differences by the test suite. Arrays are NCHW row-major;
dtype (float32 for training, float64 for verification) is preserved
throughout.
"""

import numpy as np

from .. import kernels


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _require(cond, msg):
    if not cond:
        raise ShapeError(msg)


def conv_output_hw(h, w, k, stride, padding):
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    _require(oh >= 1 and ow >= 1,
             f"kernel {k}x{k} stride {stride} pad {padding} does not fit "
             f"input {h}x{w}")
    return oh, ow


def conv2d_forward(x, w, stride=1, padding=0):
    """Standard cross-correlation, input (N,C,H,W) with weights (O,I,kh,kw)."""
    _require(x.ndim == 4 and w.ndim == 4,
             f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    _require(x.shape[1] == w.shape[1],
             f"conv2d channel mismatch: input {x.shape} has {x.shape[1]} "
             f"channels, weight {w.shape} expects {w.shape[1]}")
    conv_output_hw(x.shape[2], x.shape[3], w.shape[2], stride, padding)
    return kernels.conv2d_forward(x, w, stride, padding)


def conv2d_backward(x, w, dy, stride=1, padding=0):
    """Gradients (dx, dw) of conv2d_forward for upstream gradient dy."""
    oh, ow = conv_output_hw(x.shape[2], x.shape[3], w.shape[2], stride, padding)
    _require(dy.shape == (x.shape[0], w.shape[0], oh, ow),
             f"conv2d upstream gradient {dy.shape} does not match output "
             f"{(x.shape[0], w.shape[0], oh, ow)}")
    return kernels.conv2d_backward(x, w, dy, stride, padding)


def depthwise_conv_forward(x, w, stride=1, padding=0):
    """Per-channel convolution, weights (C,1,kh,kw); channel c of the output
    depends only on channel c of the input."""
    _require(x.ndim == 4 and w.ndim == 4 and w.shape[1] == 1,
             f"depthwise expects weight (C,1,k,k), got {w.shape}")
    _require(x.shape[1] == w.shape[0],
             f"depthwise channel mismatch: input {x.shape} has {x.shape[1]} "
             f"channels, weight {w.shape} has {w.shape[0]} filters")
    conv_output_hw(x.shape[2], x.shape[3], w.shape[2], stride, padding)
    return kernels.depthwise_forward(x, w, stride, padding)


def depthwise_conv_backward(x, w, dy, stride=1, padding=0):
    oh, ow = conv_output_hw(x.shape[2], x.shape[3], w.shape[2], stride, padding)
    _require(dy.shape == (x.shape[0], x.shape[1], oh, ow),
             f"depthwise upstream gradient {dy.shape} does not match output "
             f"{(x.shape[0], x.shape[1], oh, ow)}")
    return kernels.depthwise_backward(x, w, dy, stride, padding)


def batchnorm_forward(x, gamma, beta, running_mean, running_var,
                      mode="train", eps=1e-5, momentum=0.9):
    """Per-channel batch normalization over (N,H,W).

    Train mode normalizes by batch statistics and folds them into the running
    buffers in place, r <- momentum*r + (1-momentum)*batch (unbiased variance
    for the running buffer, biased for normalization). Eval mode uses the
    running buffers. Returns (y, cache) where cache feeds batchnorm_backward.
    """
    c = x.shape[1]
    _require(gamma.shape == (c,) and beta.shape == (c,),
             f"batchnorm gamma/beta must have shape ({c},), got "
             f"{gamma.shape} and {beta.shape}")
    if mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= momentum
        running_var += (1.0 - momentum) * unbiased
    elif mode == "eval":
        inv_std = (1.0 / np.sqrt(running_var + np.asarray(eps, dtype=x.dtype))
                   ).astype(x.dtype)
        xhat = (x - running_mean[None, :, None, None]) * inv_std[None, :, None, None]
    else:
        raise ValueError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, gamma, inv_std, mode)
    return y, cache


def batchnorm_backward(cache, dy):
    """Gradients (dx, dgamma, dbeta) for batchnorm_forward."""
    xhat, gamma, inv_std, mode = cache
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    scale = (gamma * inv_std)[None, :, None, None]
    if mode == "eval":
        return dy * scale, dgamma, dbeta
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    mean_dy = dy.mean(axis=(0, 2, 3))[None, :, None, None]
    mean_dy_xhat = (dy * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
    dx = scale * (dy - mean_dy - xhat * mean_dy_xhat)
    return dx, dgamma, dbeta


def relu6_forward(x):
    """min(max(x, 0), 6) elementwise."""
    return np.clip(x, 0, 6)


def relu6_backward(x, dy):
    mask = ((x > 0) & (x < 6)).astype(dy.dtype)
    return dy * mask


def dense_forward(x, w, b):
    """Affine map (N,D) @ (D,K) + (K,)."""
    _require(x.ndim == 2 and x.shape[1] == w.shape[0],
             f"dense input {x.shape} incompatible with weight {w.shape}")
    _require(b.shape == (w.shape[1],),
             f"dense bias {b.shape} incompatible with weight {w.shape}")
    return x @ w + b


def dense_backward(x, w, dy):
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def global_avg_pool_forward(x):
    """Adaptive average pooling to 1x1, returned flattened as (N,C)."""
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(dy, h, w):
    scale = 1.0 / (h * w)
    return np.broadcast_to((dy * scale)[:, :, None, None],
                           (dy.shape[0], dy.shape[1], h, w)).astype(dy.dtype).copy()


def softmax_with_temperature(logits, temperature):
    """Row-stable softmax of logits/T; rows sum to 1 and T -> inf flattens."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = logits / np.asarray(temperature, dtype=logits.dtype)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
