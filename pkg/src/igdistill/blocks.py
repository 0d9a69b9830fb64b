"""Block-structured CNN specs, teacher/student derivation, and checkpoints.

Two families share one grammar (initial ConvBNReLU, a run of InvertedResidual
blocks, an optional 1x1 ConvBNReLU feature head, classifier):

* "mobilenetv2": the full-size teacher, 2,236,682 parameters at 10 classes.
* "micronet": the same grammar at 1/8 channel width with 4 residual blocks,
  small enough to train on a laptop CPU in minutes.

Students are derived by removing InvertedResidual blocks from the end (the
feature head is dropped too) and re-fitting the classifier to the last
retained width.
"""

import hashlib
import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .nn.layers import (BatchNorm2d, Conv2d, Dense, DepthwiseConv2d,
                        GlobalAvgPool, ReLU6)

CONV_BN_RELU = "ConvBNReLU"
INVERTED_RESIDUAL = "InvertedResidual"
CLASSIFIER = "Classifier"

CHECKPOINT_MAGIC = b"DFKG1"


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    in_channels: int
    out_channels: int
    stride: int = 1
    expansion: int = 1
    kernel: int = 3
    block_id: int = 0

    @property
    def has_skip(self):
        return (self.kind == INVERTED_RESIDUAL and self.stride == 1
                and self.in_channels == self.out_channels)


@dataclass(frozen=True)
class ModelSpec:
    family: str
    blocks: tuple
    attention_source: int
    num_classes: int
    input_shape: tuple

    def block_by_id(self, block_id):
        for b in self.blocks:
            if b.block_id == block_id:
                return b
        raise KeyError(f"no block with id {block_id} in this spec "
                       f"(ids: {[b.block_id for b in self.blocks]})")

    def inverted_residual_count(self):
        return sum(1 for b in self.blocks if b.kind == INVERTED_RESIDUAL)

    def to_json(self):
        return json.dumps({
            "family": self.family,
            "attention_source": self.attention_source,
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
            "blocks": [{
                "kind": b.kind, "in_channels": b.in_channels,
                "out_channels": b.out_channels, "stride": b.stride,
                "expansion": b.expansion, "kernel": b.kernel,
                "block_id": b.block_id,
            } for b in self.blocks],
        }, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text):
        raw = json.loads(text)
        blocks = tuple(BlockSpec(**b) for b in raw["blocks"])
        return ModelSpec(family=raw["family"], blocks=blocks,
                         attention_source=raw["attention_source"],
                         num_classes=raw["num_classes"],
                         input_shape=tuple(raw["input_shape"]))


# (expansion, in, out, stride) of the 17 full-size residual blocks
_MOBILENETV2_RESIDUALS = (
    (1, 32, 16, 1),
    (6, 16, 24, 2), (6, 24, 24, 1),
    (6, 24, 32, 2), (6, 32, 32, 1), (6, 32, 32, 1),
    (6, 32, 64, 2), (6, 64, 64, 1), (6, 64, 64, 1), (6, 64, 64, 1),
    (6, 64, 96, 1), (6, 96, 96, 1), (6, 96, 96, 1),
    (6, 96, 160, 2), (6, 160, 160, 1), (6, 160, 160, 1),
    (6, 160, 320, 1),
)

# 1/8-width variant: 4 residual blocks, feature head 1280/8 = 160
_MICRONET_RESIDUALS = (
    (1, 4, 2, 1),
    (6, 2, 3, 2),
    (6, 3, 3, 1),
    (6, 3, 4, 2),
)

_FAMILIES = {
    "mobilenetv2": {
        "stem_channels": 32, "stem_stride": 2,
        "residuals": _MOBILENETV2_RESIDUALS,
        "head_channels": 1280,
        "attention_source": 9,
        # blocks removed -> attention tap shared with the teacher
        "student_attention": {2: 9, 4: 9, 6: 9, 8: 4, 10: 4, 12: 4,
                              14: 2, 16: 0},
        "input_shape": (3, 32, 32),
    },
    "micronet": {
        "stem_channels": 4, "stem_stride": 2,
        "residuals": _MICRONET_RESIDUALS,
        "head_channels": 160,
        "attention_source": 2,
        "student_attention": {1: 2, 2: 2, 3: 1},
        "input_shape": (3, 32, 32),
    },
}


def teacher_spec(num_classes=10, width_config="mobilenetv2"):
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if width_config not in _FAMILIES:
        raise ValueError(f"unknown width_config {width_config!r}; "
                         f"choose from {sorted(_FAMILIES)}")
    fam = _FAMILIES[width_config]
    blocks = [BlockSpec(CONV_BN_RELU, fam["input_shape"][0],
                        fam["stem_channels"], stride=fam["stem_stride"],
                        kernel=3, block_id=0)]
    bid = 1
    for t, cin, cout, s in fam["residuals"]:
        blocks.append(BlockSpec(INVERTED_RESIDUAL, cin, cout, stride=s,
                                expansion=t, kernel=3, block_id=bid))
        bid += 1
    blocks.append(BlockSpec(CONV_BN_RELU, blocks[-1].out_channels,
                            fam["head_channels"], stride=1, kernel=1,
                            block_id=bid))
    blocks.append(BlockSpec(CLASSIFIER, fam["head_channels"], num_classes,
                            kernel=1, block_id=bid + 1))
    return ModelSpec(family=width_config, blocks=tuple(blocks),
                     attention_source=fam["attention_source"],
                     num_classes=num_classes,
                     input_shape=fam["input_shape"])


def student_removals(family):
    """Valid n_blocks_removed values for a family (0 always works)."""
    if family not in _FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from "
                         f"{sorted(_FAMILIES)}")
    return sorted(_FAMILIES[family]["student_attention"])


def derive_student(teacher, n_blocks_removed):
    """Spec for a student retaining the stem and the first (n_ir - n) residual
    blocks; the feature head is dropped and the classifier re-fitted."""
    spec = teacher.spec if isinstance(teacher, Model) else teacher
    fam = _FAMILIES[spec.family]
    valid = sorted(fam["student_attention"])
    if n_blocks_removed == 0:
        return spec
    if n_blocks_removed not in fam["student_attention"]:
        raise ValueError(
            f"cannot remove {n_blocks_removed} blocks from the "
            f"{spec.family!r} family; valid removal counts: {valid} (or 0)")
    n_ir = spec.inverted_residual_count()
    keep = n_ir - n_blocks_removed
    retained = [b for b in spec.blocks
                if b.kind != CLASSIFIER][:1 + keep]
    classifier_id = spec.blocks[-1].block_id
    classifier = BlockSpec(CLASSIFIER, retained[-1].out_channels,
                           spec.num_classes, kernel=1, block_id=classifier_id)
    return ModelSpec(family=spec.family,
                     blocks=tuple(retained) + (classifier,),
                     attention_source=fam["student_attention"][n_blocks_removed],
                     num_classes=spec.num_classes,
                     input_shape=spec.input_shape)


class ConvBNReLUBlock:
    def __init__(self, spec, rng, dtype):
        pad = spec.kernel // 2
        self.spec = spec
        self.conv = Conv2d(spec.in_channels, spec.out_channels, spec.kernel,
                           stride=spec.stride, padding=pad, rng=rng,
                           dtype=dtype)
        self.bn = BatchNorm2d(spec.out_channels, dtype=dtype)
        self.act = ReLU6()

    def forward(self, x, mode):
        return self.act.forward(self.bn.forward(self.conv.forward(x, mode),
                                                mode), mode)

    def backward(self, dy):
        return self.conv.backward(self.bn.backward(self.act.backward(dy)))

    def sublayers(self):
        return [("conv", self.conv), ("bn", self.bn)]


class InvertedResidualBlock:
    """Narrow-wide-narrow: pointwise expansion, depthwise 3x3, pointwise
    projection; skip connection when stride 1 and widths match."""

    def __init__(self, spec, rng, dtype):
        self.spec = spec
        hidden = spec.in_channels * spec.expansion
        self.expand = None
        if spec.expansion != 1:
            self.expand = (Conv2d(spec.in_channels, hidden, 1, rng=rng,
                                  dtype=dtype),
                           BatchNorm2d(hidden, dtype=dtype), ReLU6())
        self.depthwise = (DepthwiseConv2d(hidden, 3, stride=spec.stride,
                                          padding=1, rng=rng, dtype=dtype),
                          BatchNorm2d(hidden, dtype=dtype), ReLU6())
        self.project = (Conv2d(hidden, spec.out_channels, 1, rng=rng,
                               dtype=dtype),
                        BatchNorm2d(spec.out_channels, dtype=dtype))

    def _chains(self):
        chains = []
        if self.expand is not None:
            chains.extend(self.expand)
        chains.extend(self.depthwise)
        chains.extend(self.project)
        return chains

    def forward(self, x, mode):
        y = x
        for layer in self._chains():
            y = layer.forward(y, mode)
        return y + x if self.spec.has_skip else y

    def backward(self, dy):
        g = dy
        for layer in reversed(self._chains()):
            g = layer.backward(g)
        return g + dy if self.spec.has_skip else g

    def sublayers(self):
        named = []
        if self.expand is not None:
            named += [("expand.conv", self.expand[0]),
                      ("expand.bn", self.expand[1])]
        named += [("depthwise.conv", self.depthwise[0]),
                  ("depthwise.bn", self.depthwise[1]),
                  ("project.conv", self.project[0]),
                  ("project.bn", self.project[1])]
        return named


class ClassifierBlock:
    def __init__(self, spec, rng, dtype):
        self.spec = spec
        self.pool = GlobalAvgPool()
        self.dense = Dense(spec.in_channels, spec.out_channels, rng=rng,
                           dtype=dtype)

    def forward(self, x, mode):
        return self.dense.forward(self.pool.forward(x, mode), mode)

    def backward(self, dy):
        return self.pool.backward(self.dense.backward(dy))

    def sublayers(self):
        return [("dense", self.dense)]


_BLOCK_TYPES = {
    CONV_BN_RELU: ConvBNReLUBlock,
    INVERTED_RESIDUAL: InvertedResidualBlock,
    CLASSIFIER: ClassifierBlock,
}


class Model:
    """An instantiated block stack with named parameters and BN state."""

    def __init__(self, spec, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.spec = spec
        self.dtype = dtype
        self.blocks = [(_BLOCK_TYPES[b.kind])(b, rng, dtype)
                       for b in spec.blocks]

    def forward(self, x, mode="eval"):
        self._check_input(x)
        y = x
        for block in self.blocks:
            y = block.forward(y, mode)
        return y

    def forward_with_attention(self, x, mode="eval", tap=None):
        """Forward pass that also returns the raw activation at the attention
        source block (the spec's, unless tap overrides it)."""
        self._check_input(x)
        tap = self.spec.attention_source if tap is None else tap
        tapped_ids = [b.spec.block_id for b in self.blocks]
        if tap not in tapped_ids:
            raise ValueError(f"attention source {tap} is not a retained "
                             f"block (retained ids: {tapped_ids})")
        y = x
        activation = None
        for block in self.blocks:
            y = block.forward(y, mode)
            if block.spec.block_id == tap:
                activation = y
        return y, activation

    def backward(self, dlogits, attention_grad=None, tap=None):
        """Backpropagate from the logits; attention_grad, when given, is
        injected at the tap block's output on the way down."""
        tap = self.spec.attention_source if tap is None else tap
        g = dlogits
        for block in reversed(self.blocks):
            if attention_grad is not None and block.spec.block_id == tap:
                g = g + attention_grad
            g = block.backward(g)
        return g

    def named_parameters(self):
        out = []
        for block in self.blocks:
            prefix = f"block{block.spec.block_id:02d}"
            for sub, layer in block.sublayers():
                for pname, p in layer.parameters():
                    out.append((f"{prefix}.{sub}.{pname}", p))
        return out

    def named_buffers(self):
        out = []
        for block in self.blocks:
            prefix = f"block{block.spec.block_id:02d}"
            for sub, layer in block.sublayers():
                for bname, buf in layer.buffers():
                    out.append((f"{prefix}.{sub}.{bname}", buf))
        return out

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None

    def astype(self, dtype):
        self.dtype = dtype
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for block in self.blocks:
            for _, layer in block.sublayers():
                if isinstance(layer, BatchNorm2d):
                    layer.running_mean = layer.running_mean.astype(dtype)
                    layer.running_var = layer.running_var.astype(dtype)
        return self

    def _check_input(self, x):
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ValueError(f"input batch {x.shape} does not match the "
                             f"spec input shape {self.spec.input_shape}")


def build_model(spec, seed=0, dtype=np.float32):
    return Model(spec, seed=seed, dtype=dtype)


def build_teacher(num_classes=10, width_config="mobilenetv2", seed=0,
                  dtype=np.float32):
    return build_model(teacher_spec(num_classes, width_config), seed=seed,
                       dtype=dtype)


def _block_param_count(b):
    if b.kind == CONV_BN_RELU:
        return (b.out_channels * b.in_channels * b.kernel * b.kernel
                + 2 * b.out_channels)
    if b.kind == INVERTED_RESIDUAL:
        hidden = b.in_channels * b.expansion
        n = 0
        if b.expansion != 1:
            n += b.in_channels * hidden + 2 * hidden
        n += hidden * 9 + 2 * hidden
        n += hidden * b.out_channels + 2 * b.out_channels
        return n
    if b.kind == CLASSIFIER:
        return b.in_channels * b.out_channels + b.out_channels
    raise ValueError(f"unknown block kind {b.kind!r}")


def param_count(model_or_spec):
    """Trainable scalars (conv weights, BN gamma/beta, dense weight+bias);
    BN running statistics are excluded."""
    if isinstance(model_or_spec, Model):
        return sum(p.data.size for _, p in model_or_spec.named_parameters())
    return sum(_block_param_count(b) for b in model_or_spec.blocks)


def conv_layer_count(spec):
    """Convolution layers under the counting convention where each expansion,
    depthwise and projection convolution counts once."""
    n = 0
    for b in spec.blocks:
        if b.kind == CONV_BN_RELU:
            n += 1
        elif b.kind == INVERTED_RESIDUAL:
            n += 2 if b.expansion == 1 else 3
    return n


def compression_factor(teacher, student):
    tc = param_count(teacher)
    sc = param_count(student)
    if tc <= 0 or sc <= 0:
        raise ValueError("parameter counts must be positive")
    return tc / sc


def save_checkpoint_bytes(model):
    """Serialize spec + named float32 tensors (params then BN buffers)."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    spec_bytes = model.spec.to_json().encode("utf-8")
    buf.write(struct.pack("<I", len(spec_bytes)))
    buf.write(spec_bytes)
    tensors = [(n, p.data) for n, p in model.named_parameters()]
    tensors += list(model.named_buffers())
    for name, arr in tensors:
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<I", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(model, path):
    data = save_checkpoint_bytes(model)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def load_checkpoint_bytes(data, dtype=np.float32):
    view = memoryview(data)
    if bytes(view[:5]) != CHECKPOINT_MAGIC:
        raise DataError("not a model checkpoint: bad magic "
                        f"{bytes(view[:5])!r}")
    off = 5
    (spec_len,) = struct.unpack_from("<I", view, off)
    off += 4
    spec = ModelSpec.from_json(bytes(view[off:off + spec_len]).decode("utf-8"))
    off += spec_len
    tensors = {}
    while off < len(view):
        (name_len,) = struct.unpack_from("<I", view, off)
        off += 4
        name = bytes(view[off:off + name_len]).decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", view, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", view, off)
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(view, dtype="<f4", count=count, offset=off)
        off += 4 * count
        tensors[name] = arr.reshape(dims).astype(dtype)

    model = Model(spec, seed=0, dtype=dtype)
    named = dict(model.named_parameters())
    for name, p in named.items():
        if name not in tensors:
            raise DataError(f"checkpoint is missing tensor {name!r}")
        if tensors[name].shape != p.data.shape:
            raise DataError(f"checkpoint tensor {name!r} has shape "
                            f"{tensors[name].shape}, expected {p.data.shape}")
        p.data = tensors[name]
    for name, buf_arr in model.named_buffers():
        if name in tensors:
            buf_arr[...] = tensors[name]
    return model


def load_checkpoint(path, dtype=np.float32):
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read(), dtype=dtype)


def model_fingerprint(model):
    """Stable hash of the serialized checkpoint, used to pin precomputed
    artifacts (logits, attribution maps) to the exact model that made them."""
    return hashlib.sha256(save_checkpoint_bytes(model)).hexdigest()
