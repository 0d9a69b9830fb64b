"""Layer objects: parameters plus cached-activation backward passes.

Only the layer vocabulary the block architectures need. Each layer caches
its forward inputs; backward consumes the cache, stores parameter gradients
on the Param objects and returns the input gradient.
"""

import numpy as np

from . import functional as F


class Param:
    """A trainable array with its gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = data
        self.grad = None


def he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    def forward(self, x, mode="train"):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def parameters(self):
        return []

    def buffers(self):
        return []

    def _take_cache(self):
        if getattr(self, "_cache", None) is None:
            raise RuntimeError(f"{type(self).__name__}.backward called "
                               "without a preceding forward")
        return self._cache


class Conv2d(Layer):
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0,
                 rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng()
        fan_in = in_ch * kernel * kernel
        self.weight = Param(he_uniform(rng, (out_ch, in_ch, kernel, kernel),
                                       fan_in, dtype))
        self.stride = stride
        self.padding = padding
        self._cache = None

    def forward(self, x, mode="train"):
        y = F.conv2d_forward(x, self.weight.data, self.stride, self.padding)
        self._cache = x
        return y

    def backward(self, dy):
        x = self._take_cache()
        dx, dw = F.conv2d_backward(x, self.weight.data, dy,
                                   self.stride, self.padding)
        self.weight.grad = dw
        return dx

    def parameters(self):
        return [("weight", self.weight)]


class DepthwiseConv2d(Layer):
    def __init__(self, channels, kernel, stride=1, padding=0,
                 rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng()
        fan_in = kernel * kernel
        self.weight = Param(he_uniform(rng, (channels, 1, kernel, kernel),
                                       fan_in, dtype))
        self.stride = stride
        self.padding = padding
        self._cache = None

    def forward(self, x, mode="train"):
        y = F.depthwise_conv_forward(x, self.weight.data,
                                     self.stride, self.padding)
        self._cache = x
        return y

    def backward(self, dy):
        x = self._take_cache()
        dx, dw = F.depthwise_conv_backward(x, self.weight.data, dy,
                                           self.stride, self.padding)
        self.weight.grad = dw
        return dx

    def parameters(self):
        return [("weight", self.weight)]


class BatchNorm2d(Layer):
    def __init__(self, channels, eps=1e-5, momentum=0.9, dtype=np.float32):
        self.gamma = Param(np.ones(channels, dtype=dtype))
        self.beta = Param(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum
        self._cache = None

    def forward(self, x, mode="train"):
        y, self._cache = F.batchnorm_forward(
            x, self.gamma.data, self.beta.data,
            self.running_mean, self.running_var,
            mode=mode, eps=self.eps, momentum=self.momentum)
        return y

    def backward(self, dy):
        cache = self._take_cache()
        dx, dgamma, dbeta = F.batchnorm_backward(cache, dy)
        self.gamma.grad = dgamma
        self.beta.grad = dbeta
        return dx

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean),
                ("running_var", self.running_var)]


class ReLU6(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, mode="train"):
        self._cache = x
        return F.relu6_forward(x)

    def backward(self, dy):
        return F.relu6_backward(self._take_cache(), dy)


class GlobalAvgPool(Layer):
    """Adaptive average pooling to 1x1; output flattened to (N, C)."""

    def __init__(self):
        self._cache = None

    def forward(self, x, mode="train"):
        self._cache = x.shape
        return F.global_avg_pool_forward(x)

    def backward(self, dy):
        shape = self._take_cache()
        return F.global_avg_pool_backward(dy, shape[2], shape[3])


class Dense(Layer):
    def __init__(self, d_in, d_out, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng()
        self.weight = Param(he_uniform(rng, (d_in, d_out), d_in, dtype))
        self.bias = Param(np.zeros(d_out, dtype=dtype))
        self._cache = None

    def forward(self, x, mode="train"):
        y = F.dense_forward(x, self.weight.data, self.bias.data)
        self._cache = x
        return y

    def backward(self, dy):
        x = self._take_cache()
        dx, dw, db = F.dense_backward(x, self.weight.data, dy)
        self.weight.grad = dw
        self.bias.grad = db
        return dx

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]
