"""Finite-difference verification helpers.

Central differences at float64 with step h=1e-5; relative error is
|analytic - numeric| / max(|analytic|, |numeric|, 1e-8), reduced by max.
Samples near the ReLU6 kinks (0 and 6) are the caller's job to avoid.
"""

import numpy as np

DEFAULT_STEP = 1e-5
KINK_MARGIN = 1e-3


def numerical_gradient(f, x, h=DEFAULT_STEP):
    """Central-difference gradient of scalar-valued f at x (evaluated entrywise)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())


def sample_away_from_kinks(rng, shape, low, high, kinks=(0.0, 6.0),
                           margin=KINK_MARGIN):
    """Uniform samples in [low, high] nudged off the given kink points."""
    x = rng.uniform(low, high, size=shape)
    for k in kinks:
        close = np.abs(x - k) < margin
        x[close] = k + margin * np.where(x[close] >= k, 2.0, -2.0)
    return x
