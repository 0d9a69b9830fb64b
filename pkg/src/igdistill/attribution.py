"""Integrated-gradients attribution with completeness diagnostics and a
binary precompute store.

Attributions follow the straight-line path from a baseline (default: black
image) to the input; the path integral is approximated by the trapezoidal
rule over `steps` segments, and each pixel's value is scaled by its
input-baseline difference. The attribution target is the pre-softmax logit
of the chosen class (log-probability available behind a flag).
"""

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .blocks import model_fingerprint
from .errors import DataError

IG_MAGIC = b"DFIG1"


class DegenerateBaselineError(ValueError):
    """F(x) and F(baseline) coincide, so the completeness ratio is undefined."""


@dataclass
class IGConfig:
    steps: int = 64
    baseline: np.ndarray | None = None  # None means all-zeros
    target: int = 0
    target_output: str = "logit"  # or "logprob"
    chunk_size: int = 128

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.target_output not in ("logit", "logprob"):
            raise ValueError(f"target_output must be 'logit' or 'logprob', "
                             f"got {self.target_output!r}")


@dataclass
class AttributionMap:
    raw: np.ndarray          # signed, (C, H, W)
    aggregated: np.ndarray   # sum of |raw| over channels, (H, W)
    steps_used: int
    model_fingerprint: str
    target_class: int


def _safe_fingerprint(model):
    if hasattr(model, "spec"):
        return model_fingerprint(model)
    return ""


def _target_outputs_and_grads(model, batch, target, target_output):
    """Evaluate the scalar target per path point and its gradient w.r.t. the
    input batch (eval mode, so rows are independent)."""
    logits = model.forward(batch, mode="eval")
    n, k = logits.shape
    onehot = np.zeros_like(logits)
    onehot[:, target] = 1.0
    if target_output == "logit":
        values = logits[:, target].copy()
        dlogits = onehot
    else:
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        values = logp[:, target].copy()
        dlogits = onehot - np.exp(logp)
    grads = model.backward(dlogits)
    return values, grads


def _path_gradients(model, x, baseline, config):
    """Trapezoid-weighted average gradient along the path, plus the target
    values at the two endpoints."""
    steps = config.steps
    betas = np.linspace(0.0, 1.0, steps + 1)
    weights = np.full(steps + 1, 1.0 / steps)
    weights[0] *= 0.5
    weights[-1] *= 0.5

    avg_grad = np.zeros_like(x, dtype=np.float64)
    f_base = f_input = None
    eval_dtype = getattr(model, "dtype", x.dtype)
    for start in range(0, steps + 1, config.chunk_size):
        chunk = betas[start:start + config.chunk_size]
        points = (baseline[None] + chunk[:, None, None, None]
                  * (x - baseline)[None]).astype(eval_dtype)
        values, grads = _target_outputs_and_grads(
            model, points, config.target, config.target_output)
        if not np.isfinite(grads).all():
            bad = np.where(~np.isfinite(grads).reshape(len(chunk), -1)
                           .all(axis=1))[0]
            raise FloatingPointError(
                f"non-finite gradient at path step {start + int(bad[0])} "
                f"of {steps}")
        avg_grad += np.einsum("n,nchw->chw",
                              weights[start:start + len(chunk)],
                              grads.astype(np.float64))
        if start == 0:
            f_base = float(values[0])
        if start + len(chunk) == steps + 1:
            f_input = float(values[-1])
    return avg_grad, f_base, f_input


def integrated_gradients(model, x, config):
    """Attribution of config.target for a single image x (C, H, W)."""
    baseline = (np.zeros_like(x) if config.baseline is None
                else config.baseline)
    if baseline.shape != x.shape:
        raise ValueError(f"baseline shape {baseline.shape} does not match "
                         f"input shape {x.shape}")
    avg_grad, _, _ = _path_gradients(model, x, baseline, config)
    raw = ((x - baseline).astype(np.float64) * avg_grad).astype(x.dtype)
    return AttributionMap(raw=raw, aggregated=aggregate(raw),
                          steps_used=config.steps,
                          model_fingerprint=_safe_fingerprint(model),
                          target_class=config.target)


def aggregate(raw):
    """Collapse signed per-channel attributions to a nonnegative H x W map
    by summing absolute values over the channel dimension."""
    return np.abs(raw).sum(axis=0)


def completeness_check(model, x, config, degenerate_tol=1e-9):
    """Relative residual |sum(raw) - (F(x) - F(baseline))| / |F(x) - F(baseline)|.

    Exact quadrature would make the attributions sum to the target
    difference; the residual measures how far the trapezoid rule is from
    that. Raises DegenerateBaselineError instead of dividing when the
    denominator vanishes.
    """
    baseline = (np.zeros_like(x) if config.baseline is None
                else config.baseline)
    avg_grad, f_base, f_input = _path_gradients(model, x, baseline, config)
    delta = f_input - f_base
    if abs(delta) <= degenerate_tol:
        raise DegenerateBaselineError(
            f"|F(x) - F(baseline)| = {abs(delta):.3e} is below "
            f"{degenerate_tol:.1e}; completeness ratio undefined")
    total = float(((x - baseline).astype(np.float64) * avg_grad).sum())
    return abs(total - delta) / abs(delta)


def write_ig_maps(path, maps):
    """DFIG1 container: magic, u32 count/H/W, then count*H*W float32 LE."""
    maps = np.ascontiguousarray(maps, dtype="<f4")
    if maps.ndim != 3:
        raise ValueError(f"expected (count, H, W) maps, got {maps.shape}")
    with open(path, "wb") as fh:
        fh.write(IG_MAGIC)
        fh.write(struct.pack("<III", *maps.shape))
        fh.write(maps.tobytes())


def read_ig_maps(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != IG_MAGIC:
        raise DataError(f"not an attribution map file: bad magic "
                        f"{data[:5]!r}")
    count, h, w = struct.unpack_from("<III", data, 5)
    expected = 5 + 12 + 4 * count * h * w
    if len(data) != expected:
        raise DataError(f"attribution map file has {len(data)} bytes, "
                        f"expected {expected}")
    maps = np.frombuffer(data, dtype="<f4", count=count * h * w, offset=17)
    return maps.reshape(count, h, w).copy()


def write_manifest(path, entries):
    lines = [f"{k}={v}" for k, v in entries.items()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, _, value = line.partition("=")
            entries[key] = value
    return entries


def manifest_path(map_path):
    return str(map_path) + ".manifest"


@dataclass
class IGStore:
    """Precomputed aggregated maps, index-aligned with a dataset."""

    maps: np.ndarray
    manifest: dict = field(default_factory=dict)

    def map_for(self, index):
        if not 0 <= index < len(self.maps):
            raise IndexError(f"no attribution map for dataset index {index} "
                             f"(store holds {len(self.maps)})")
        return self.maps[index]

    def __len__(self):
        return len(self.maps)


def precompute_dataset(model, dataset, config, out_path):
    """One aggregated map per image, attributed w.r.t. its true label,
    written in dataset order. Re-running with identical inputs is
    byte-identical. Returns the manifest entries."""
    n = len(dataset.images)
    maps = np.empty((n, dataset.images.shape[2], dataset.images.shape[3]),
                    dtype=np.float32)
    fingerprint = model_fingerprint(model)
    for i in range(n):
        cfg = IGConfig(steps=config.steps, baseline=config.baseline,
                       target=int(dataset.labels[i]),
                       target_output=config.target_output,
                       chunk_size=config.chunk_size)
        maps[i] = integrated_gradients(model, dataset.images[i], cfg).aggregated
    write_ig_maps(out_path, maps)
    if config.baseline is None:
        baseline_kind = "zeros"
    else:
        baseline_kind = "sha256:" + hashlib.sha256(
            np.ascontiguousarray(config.baseline, dtype="<f4").tobytes()
        ).hexdigest()
    entries = {
        "model_fingerprint": fingerprint,
        "steps": str(config.steps),
        "baseline": baseline_kind,
        "dataset_sha256": dataset.checksum(),
    }
    write_manifest(manifest_path(out_path), entries)
    return entries


def load_ig_store(map_path, expect_fingerprint=None, expect_dataset_sha=None):
    """Load maps + manifest, refusing stale artifacts when expectations are
    given."""
    maps = read_ig_maps(map_path)
    manifest = read_manifest(manifest_path(map_path))
    if (expect_fingerprint is not None
            and manifest.get("model_fingerprint") != expect_fingerprint):
        raise DataError(
            "attribution maps were produced by a different model: manifest "
            f"fingerprint {manifest.get('model_fingerprint')!r} != expected "
            f"{expect_fingerprint!r}; re-run the precompute step")
    if (expect_dataset_sha is not None
            and manifest.get("dataset_sha256") != expect_dataset_sha):
        raise DataError(
            "attribution maps were produced for a different dataset: "
            f"manifest checksum {manifest.get('dataset_sha256')!r} != "
            f"expected {expect_dataset_sha!r}; re-run the precompute step")
    return IGStore(maps=maps, manifest=manifest)


def convergence_ratio(model, x, config):
    """Residual at 2x steps over residual at 1x steps; values near or above
    1 suggest the step count is too coarse for this model."""
    coarse = completeness_check(model, x, config)
    fine_cfg = IGConfig(steps=config.steps * 2, baseline=config.baseline,
                        target=config.target,
                        target_output=config.target_output,
                        chunk_size=config.chunk_size)
    fine = completeness_check(model, x, fine_cfg)
    if coarse == 0.0:
        return 0.0
    return fine / coarse
