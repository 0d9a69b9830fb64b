"""Parameter, memory and latency accounting, plus the kernel backend
benchmark.

Latency numbers are host-dependent; every check built on them is ordinal
(orderings and ratios), never absolute.
"""

import platform
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .blocks import param_count

BYTES_PER_FLOAT32 = 4


@dataclass
class BenchReport:
    model_id: str
    param_count: int
    est_memory_bytes: int
    mean_batch_latency_s: float
    latency_std: float
    speedup_vs_reference: float
    host: str = ""


def host_descriptor():
    return f"{platform.platform()} / {platform.processor() or 'unknown cpu'}"


def time_inference(model, batch, warmup_iters=2, measured_iters=10,
                   clock=time.perf_counter):
    """Mean/std of eval-mode forward latency over measured_iters runs after
    warmup_iters discarded runs; the clock must be monotonic."""
    if warmup_iters < 1:
        raise ValueError(f"warmup_iters must be >= 1, got {warmup_iters}")
    if measured_iters < 5:
        raise ValueError(f"measured_iters must be >= 5, got "
                         f"{measured_iters}")
    for _ in range(warmup_iters):
        model.forward(batch, mode="eval")
    samples = np.empty(measured_iters)
    for i in range(measured_iters):
        t0 = clock()
        model.forward(batch, mode="eval")
        samples[i] = clock() - t0
    return float(samples.mean()), float(samples.std())


def memory_estimate(model_or_spec, bytes_per_element=BYTES_PER_FLOAT32):
    """Parameter memory only (activations excluded): param_count x bytes
    per element."""
    return param_count(model_or_spec) * bytes_per_element


def bench_models(named_models, batch, warmup_iters=2, measured_iters=10,
                 clock=time.perf_counter):
    """Latency reports for (model_id, model) pairs; the first entry is the
    speedup reference."""
    host = host_descriptor()
    reports = []
    reference_latency = None
    for model_id, model in named_models:
        mean, std = time_inference(model, batch, warmup_iters,
                                   measured_iters, clock)
        if reference_latency is None:
            reference_latency = mean
        reports.append(BenchReport(
            model_id=model_id, param_count=param_count(model),
            est_memory_bytes=memory_estimate(model),
            mean_batch_latency_s=mean, latency_std=std,
            speedup_vs_reference=reference_latency / mean, host=host))
    return reports


DEFAULT_KERNEL_SHAPES = (
    # (N, C, H, W, out_channels, kernel, stride) conv cases
    (32, 3, 32, 32, 8, 3, 2),
    (32, 8, 16, 16, 16, 3, 1),
    (32, 16, 8, 8, 32, 1, 1),
)


def compare_kernel_backends(shapes=DEFAULT_KERNEL_SHAPES, dtype=np.float32,
                            iters=5, seed=0, clock=time.perf_counter):
    """Time conv forward+backward per backend on representative shapes.

    Returns rows of {shape, backend, seconds}; with only the pure backend
    installed, the comparison degenerates to a single-backend timing table.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for shape in shapes:
        n, c, h, w, o, k, stride = shape
        x = rng.standard_normal((n, c, h, w)).astype(dtype)
        wt = rng.standard_normal((o, c, k, k)).astype(dtype)
        pad = k // 2
        for name, backend in sorted(kernels.available_backends().items()):
            y = backend.conv2d_forward(x, wt, stride, pad)  # warmup
            dy = np.ones_like(y)
            backend.conv2d_backward(x, wt, dy, stride, pad)
            t0 = clock()
            for _ in range(iters):
                y = backend.conv2d_forward(x, wt, stride, pad)
                backend.conv2d_backward(x, wt, dy, stride, pad)
            rows.append({"shape": shape, "backend": name,
                         "seconds": (clock() - t0) / iters})
    return rows
