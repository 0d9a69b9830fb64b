from . import functional, gradcheck
from .adam import Adam, adam_step
from .layers import (BatchNorm2d, Conv2d, Dense, DepthwiseConv2d,
                     GlobalAvgPool, Layer, Param, ReLU6)

__all__ = [
    "functional", "gradcheck", "Adam", "adam_step",
    "BatchNorm2d", "Conv2d", "Dense", "DepthwiseConv2d",
    "GlobalAvgPool", "Layer", "Param", "ReLU6",
]
