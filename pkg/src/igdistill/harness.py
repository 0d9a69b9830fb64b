"""Training loops and experiment protocols.

A run is fully determined by (config, seed): weight init, epoch shuffling,
and augmentation draw from namespaced streams of the run seed, so repeated
runs are bit-identical and runs are embarrassingly parallel.
"""

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .attribution import read_manifest, write_manifest
from .augment import AugmentPolicy, augment_batch
from .blocks import model_fingerprint
from .errors import DataError
from .losses import HyperParams
from .nn.adam import Adam
from .stats import StatsSummary, summarize


@dataclass
class RunRecord:
    config_id: str
    seed: int
    subsample_fraction: float
    epoch_curve: list          # (train_loss, test_accuracy) per epoch
    final_test_accuracy: float
    wall_time_s: float


@dataclass
class TeacherOutputs:
    """Precomputed eval-mode teacher logits (and, when a tap is set,
    attention maps), index-aligned with the full training set."""

    logits: np.ndarray
    attention_maps: np.ndarray | None
    fingerprint: str
    tap: int | None
    attention_power: int = 2


def _epoch_rng(seed, epoch):
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(0, int(epoch))))


def predict(model, images, batch_size=256):
    out = []
    for i in range(0, len(images), batch_size):
        logits = model.forward(images[i:i + batch_size], mode="eval")
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def evaluate(model, dataset, batch_size=256):
    preds = predict(model, dataset.images, batch_size)
    return float((preds == dataset.labels).mean())


def _check_alignment(name, store_len, ids):
    if ids.max() >= store_len:
        raise ValueError(f"{name} store holds {store_len} rows but the "
                         f"dataset refers to index {int(ids.max())}; the "
                         "store is not aligned with this dataset")


def train_student(student, train, test, hyper=None, seed=0,
                  teacher_logits=None, teacher_attn=None, ig_store=None,
                  subset_indices=None, subsample_fraction=1.0,
                  config_id="run", eval_batch_size=256):
    """Adam training of `student` (mutated in place) for hyper.epochs epochs.

    The loss is plain cross-entropy without teacher logits, the weighted
    distillation combination with them, plus the attention term when teacher
    maps are provided. The overlay augmentation is applied whenever an
    attribution store is passed.
    """
    hyper = hyper or HyperParams()
    t0 = time.perf_counter()
    indices = (np.arange(len(train)) if subset_indices is None
               else np.asarray(subset_indices))
    ids = train.ids
    if teacher_logits is not None:
        _check_alignment("teacher logits", len(teacher_logits), ids[indices])
    if teacher_attn is not None:
        _check_alignment("teacher attention", len(teacher_attn),
                         ids[indices])
    policy = AugmentPolicy(overlay_p=hyper.overlay_p, rng_seed=seed)
    opt = Adam(student.named_parameters(), lr=hyper.lr)
    curve = []
    for epoch in range(hyper.epochs):
        order = _epoch_rng(seed, epoch).permutation(indices)
        batch_losses = []
        for start in range(0, len(order), hyper.batch_size):
            bidx = order[start:start + hyper.batch_size]
            xb = train.images[bidx]
            yb = train.labels[bidx]
            bids = ids[bidx]
            if ig_store is not None:
                xb = augment_batch(xb, bids, ig_store, policy, epoch=epoch)

            attention_grad = None
            at = 0.0
            if teacher_attn is not None:
                logits, act = student.forward_with_attention(xb, mode="train")
                amap, cache = losses.attention_map_with_cache(
                    act, hyper.attention_power)
                target_maps = teacher_attn[bids].astype(amap.dtype)
                at = losses.at_loss(amap, target_maps)
                dmap = hyper.gamma * losses.at_loss_grad(amap, target_maps)
                attention_grad = losses.attention_map_backward(cache, dmap)
            else:
                logits = student.forward(xb, mode="train")

            ce = losses.cross_entropy(logits, yb)
            dce = losses.cross_entropy_grad(logits, yb)
            if teacher_logits is not None:
                tl = teacher_logits[bids].astype(logits.dtype)
                kl = losses.kd_loss(logits, tl, hyper.temperature)
                dkl = losses.kd_loss_grad(logits, tl, hyper.temperature)
                dlogits = (1.0 - hyper.alpha) * dce + hyper.alpha * dkl
                breakdown = losses.total_loss(ce, kl, at, hyper.alpha,
                                              hyper.gamma)
                batch_losses.append(breakdown.total)
            else:
                dlogits = dce
                batch_losses.append(ce + hyper.gamma * at
                                    if teacher_attn is not None else ce)

            student.zero_grad()
            student.backward(dlogits.astype(logits.dtype),
                             attention_grad=attention_grad)
            opt.step()
        acc = evaluate(student, test, eval_batch_size)
        curve.append((float(np.mean(batch_losses)), acc))
    return RunRecord(config_id=config_id, seed=seed,
                     subsample_fraction=subsample_fraction,
                     epoch_curve=curve,
                     final_test_accuracy=curve[-1][1] if curve
                     else evaluate(student, test, eval_batch_size),
                     wall_time_s=time.perf_counter() - t0)


def precompute_teacher_outputs(teacher, dataset, tap=None,
                               attention_power=2, batch_size=256):
    """Eval-mode teacher logits (and attention maps when a tap is given),
    one row per dataset index."""
    logits_rows = []
    attn_rows = [] if tap is not None else None
    for i in range(0, len(dataset), batch_size):
        xb = dataset.images[i:i + batch_size]
        if tap is None:
            logits_rows.append(teacher.forward(xb, mode="eval"))
        else:
            logits, act = teacher.forward_with_attention(xb, mode="eval",
                                                         tap=tap)
            logits_rows.append(logits)
            attn_rows.append(losses.attention_map(act, attention_power))
    return TeacherOutputs(
        logits=np.concatenate(logits_rows).astype(np.float32),
        attention_maps=(np.concatenate(attn_rows).astype(np.float32)
                        if attn_rows is not None else None),
        fingerprint=model_fingerprint(teacher),
        tap=tap, attention_power=attention_power)


def save_teacher_outputs(prefix, outputs, dataset_sha):
    """Persist a TeacherOutputs store as .npy arrays plus a manifest."""
    np.save(str(prefix) + ".logits.npy", outputs.logits)
    entries = {"model_fingerprint": outputs.fingerprint,
               "dataset_sha256": dataset_sha,
               "tap": "" if outputs.tap is None else str(outputs.tap),
               "attention_power": str(outputs.attention_power)}
    if outputs.attention_maps is not None:
        np.save(str(prefix) + ".attn.npy", outputs.attention_maps)
    write_manifest(str(prefix) + ".manifest", entries)


def load_teacher_outputs(prefix, expect_fingerprint=None,
                         expect_dataset_sha=None):
    manifest = read_manifest(str(prefix) + ".manifest")
    if (expect_fingerprint is not None
            and manifest.get("model_fingerprint") != expect_fingerprint):
        raise DataError(
            "teacher outputs were produced by a different model "
            f"(fingerprint {manifest.get('model_fingerprint')!r}); re-run "
            "precompute-logits")
    if (expect_dataset_sha is not None
            and manifest.get("dataset_sha256") != expect_dataset_sha):
        raise DataError(
            "teacher outputs were produced for a different dataset; re-run "
            "precompute-logits")
    logits = np.load(str(prefix) + ".logits.npy")
    tap = manifest.get("tap", "")
    attn = None
    if tap != "":
        attn = np.load(str(prefix) + ".attn.npy")
    return TeacherOutputs(logits=logits, attention_maps=attn,
                          fingerprint=manifest.get("model_fingerprint", ""),
                          tap=None if tap == "" else int(tap),
                          attention_power=int(
                              manifest.get("attention_power", "2")))


@dataclass
class GridCell:
    params: dict
    summary: StatsSummary
    records: list = field(default_factory=list)


def grid_search(space, runs_per_cell, run_fn, master_seed=0):
    """Evaluate every cell of the cross product of `space` (a mapping of
    hyperparameter name to value list, in declared order).

    run_fn(params, seed) must return a RunRecord. Returns (cells, best_index)
    with the best cell chosen by max mean accuracy, ties broken by lower
    alpha then lower temperature.
    """
    names = list(space)
    if not names or any(len(v) == 0 for v in space.values()):
        raise ValueError("grid space is empty")
    cells = []
    for cell_idx, combo in enumerate(itertools.product(
            *(space[n] for n in names))):
        params = dict(zip(names, combo))
        records = []
        for r in range(runs_per_cell):
            seed = int(np.random.SeedSequence(
                entropy=master_seed,
                spawn_key=(cell_idx, r)).generate_state(1)[0])
            records.append(run_fn(params, seed))
        cells.append(GridCell(params=params, summary=summarize(records),
                              records=records))

    def rank(cell):
        return (-cell.summary.mean,
                cell.params.get("alpha", 0.0),
                cell.params.get("temperature", 0.0))

    best = min(range(len(cells)), key=lambda i: rank(cells[i]))
    return cells, best


def mc_subset_indices(n, fraction, master_seed, k):
    """Without-replacement subset of floor(fraction * n) indices for Monte
    Carlo run k, reproducible from (master_seed, k)."""
    size = int(np.floor(fraction * n))
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(int(k),)))
    return np.sort(rng.choice(n, size=size, replace=False))


def monte_carlo(run_fn, n_train, n_runs, fraction, master_seed=0,
                batch_size=None):
    """n_runs independent runs, each on a fresh without-replacement subset of
    the training indices; evaluation is the caller's (full test set).

    run_fn(k, seed, subset_indices) must return a RunRecord.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    size = int(np.floor(fraction * n_train))
    if batch_size is not None and size < batch_size:
        raise ValueError(f"subset size {size} is smaller than the batch "
                         f"size {batch_size}")
    records = []
    for k in range(n_runs):
        subset = mc_subset_indices(n_train, fraction, master_seed, k)
        seed = int(np.random.SeedSequence(
            entropy=master_seed, spawn_key=(int(k), 1)).generate_state(1)[0])
        records.append(run_fn(k, seed, subset))
    return records


@dataclass
class FilteredEval:
    raw_accuracy: float
    balanced_accuracy: float
    kept: int
    total: int


def filtered_eval(model, dataset, teacher, batch_size=256):
    """Evaluate `model` only on samples the teacher classifies correctly,
    reporting raw accuracy and balanced accuracy (mean per-class recall)."""
    teacher_preds = predict(teacher, dataset.images, batch_size)
    mask = teacher_preds == dataset.labels
    if not mask.any():
        raise ValueError("the teacher classifies no sample correctly; the "
                         "filtered evaluation set is empty")
    labels = dataset.labels[mask]
    preds = predict(model, dataset.images[mask], batch_size)
    raw = float((preds == labels).mean())
    recalls = [float((preds[labels == c] == c).mean())
               for c in np.unique(labels)]
    return FilteredEval(raw_accuracy=raw,
                        balanced_accuracy=float(np.mean(recalls)),
                        kept=int(mask.sum()), total=len(dataset))
