"""Attribution-map overlay augmentation.

Per image: draw a scale factor from a log-uniform distribution, raise the
stored nonnegative map to that power, min-max normalize to [0,1], then with
probability overlay_p blend it equally into the image (replicated across
channels). Every image gets its own rng stream derived from the dataset
index, so batch composition and worker parallelism cannot change results.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class AugmentPolicy:
    overlay_p: float = 0.1
    scale_min: float = 1.0
    scale_max: float = 2.0
    blend: tuple = (0.5, 0.5)
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.overlay_p <= 1.0:
            raise ValueError(f"overlay_p must be in [0,1], got "
                             f"{self.overlay_p}")
        if self.scale_min > self.scale_max:
            raise ValueError(f"scale_min {self.scale_min} exceeds scale_max "
                             f"{self.scale_max}")
        if abs(sum(self.blend) - 1.0) > 1e-12:
            raise ValueError(f"blend weights must sum to 1, got {self.blend}")


def sample_scale(rng, policy):
    """Log-uniform scale: exp(U[ln scale_min, ln scale_max]). Consumes one
    rng value."""
    u = rng.random()
    lo = np.log(policy.scale_min)
    hi = np.log(policy.scale_max)
    return float(np.exp(lo + u * (hi - lo)))


def scale_map(ig, s):
    """Elementwise power of a nonnegative aggregated map; monotone, so the
    argmax never moves."""
    ig = np.asarray(ig)
    if (ig < 0).any():
        raise ValueError("scale_map expects a nonnegative aggregated map; "
                         "negative values suggest a raw signed map was "
                         "passed")
    return ig ** s


def normalize_map(ig_scaled):
    """Min-max normalization onto [0,1]; a constant map normalizes to zeros
    (no distinguishing features) rather than dividing by zero."""
    ig_scaled = np.asarray(ig_scaled)
    lo = ig_scaled.min()
    hi = ig_scaled.max()
    if hi == lo:
        return np.zeros_like(ig_scaled)
    return (ig_scaled - lo) / (hi - lo)


def overlay(x, ig_hat, rng, policy):
    """With probability overlay_p, blend the normalized map into the image
    (replicated over channels); otherwise return x unchanged. The Bernoulli
    draw always consumes exactly one rng value."""
    if x.min() < 0 or x.max() > 1:
        raise ValueError(f"overlay expects image values in [0,1], got range "
                         f"[{x.min():.4g}, {x.max():.4g}]; check the "
                         "pipeline ordering")
    apply = rng.random() < policy.overlay_p
    if not apply:
        return x
    w_img, w_map = policy.blend
    blended = w_img * x + w_map * np.broadcast_to(ig_hat, x.shape)
    return blended.astype(x.dtype)


def image_rng(policy, epoch, index):
    """The per-image stream: split from (policy seed, epoch) by dataset
    index. The leading 1 keeps these streams disjoint from the epoch
    shuffling streams derived from the same run seed."""
    seq = np.random.SeedSequence(entropy=policy.rng_seed,
                                 spawn_key=(1, int(epoch), int(index)))
    return np.random.default_rng(seq)


def augment_image(x, ig_map, rng, policy):
    s = sample_scale(rng, policy)
    ig_hat = normalize_map(scale_map(ig_map, s))
    return overlay(x, ig_hat, rng, policy)


def augment_batch(batch, indices, ig_store, policy, epoch=0):
    """Apply the overlay pipeline independently per image. `indices` are the
    images' dataset indices, used both to fetch the precomputed map and to
    derive the per-image rng stream."""
    if len(indices) != len(batch):
        raise ValueError(f"got {len(batch)} images but {len(indices)} "
                         "dataset indices")
    out = batch.copy()
    for row, idx in enumerate(indices):
        rng = image_rng(policy, epoch, idx)
        out[row] = augment_image(batch[row], ig_store.map_for(int(idx)),
                                 rng, policy)
    return out
