"""igdistill: knowledge distillation with attribution-map data augmentation.

A from-scratch CNN training stack (compiled or pure numpy convolution
kernels), block-removal model compression, temperature-scaled distillation,
attention transfer, integrated-gradients attribution and overlay
augmentation, plus the experiment harness and statistics that evaluate them.
"""

from . import (attribution, augment, bench, blocks, config, data, harness,
               kernels, losses, nn, report, stats)
from .errors import ConfigError, DataError

__version__ = "0.1.0"

__all__ = [
    "attribution", "augment", "bench", "blocks", "config", "data",
    "harness", "kernels", "losses", "nn", "report", "stats",
    "ConfigError", "DataError", "__version__",
]
