"""Training objectives: cross-entropy, softened-logit divergence, attention
maps and their alignment penalty, and the weighted compositions.

All losses are batch means; analytic gradients are provided next to each
forward so the training loop never needs numeric differentiation.
"""

from dataclasses import dataclass

import numpy as np

from .nn import functional as F


@dataclass
class HyperParams:
    """Distillation settings. Defaults are the tuned optimum; the
    "supplement-default" preset carries the untuned code defaults."""

    alpha: float = 0.01
    temperature: float = 2.5
    gamma: float = 0.8
    overlay_p: float = 0.1
    attention_power: int = 2
    lr: float = 0.001
    epochs: int = 100
    batch_size: int = 64

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got "
                             f"{self.temperature}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0,1], got {self.gamma}")
        if not 0.0 <= self.overlay_p <= 1.0:
            raise ValueError(f"overlay_p must be in [0,1], got "
                             f"{self.overlay_p}")
        if self.attention_power < 1:
            raise ValueError(f"attention_power must be >= 1, got "
                             f"{self.attention_power}")


PRESETS = {
    "paper-optimal": HyperParams(),
    "supplement-default": HyperParams(alpha=0.5, temperature=2.0, gamma=0.5,
                                      overlay_p=0.5),
}


@dataclass
class LossBreakdown:
    ce: float
    kl: float
    at: float
    total: float


def cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label], via a stable
    log-sum-exp."""
    labels = np.asarray(labels)
    k = logits.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    logp = F.log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def cross_entropy_grad(logits, labels):
    """d cross_entropy / d logits: (softmax - onehot) / N."""
    labels = np.asarray(labels)
    n = logits.shape[0]
    p = F.softmax_with_temperature(logits, 1.0)
    p[np.arange(n), labels] -= 1.0
    return p / n


def kd_loss(student_logits, teacher_logits, temperature):
    """Divergence of the temperature-softened distributions,
    KL(softmax(z_t/T) || softmax(z_s/T)) summed over classes, averaged over
    the batch, scaled by T^2 (the scaling keeps gradient magnitudes
    comparable across temperatures)."""
    if student_logits.shape != teacher_logits.shape:
        raise ValueError(f"logit shapes differ: student "
                         f"{student_logits.shape} vs teacher "
                         f"{teacher_logits.shape}")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    n = student_logits.shape[0]
    log_ps = F.log_softmax(student_logits / temperature)
    log_pt = F.log_softmax(teacher_logits / temperature)
    pt = np.exp(log_pt)
    kl = (pt * (log_pt - log_ps)).sum()
    return float(kl * temperature * temperature / n)


def kd_loss_grad(student_logits, teacher_logits, temperature):
    """d kd_loss / d student_logits = T (p_s - p_t) / N."""
    n = student_logits.shape[0]
    ps = F.softmax_with_temperature(student_logits, temperature)
    pt = F.softmax_with_temperature(teacher_logits, temperature)
    return temperature * (ps - pt) / n


def combine_kd(ce, kl, alpha):
    """(1 - alpha) * ce + alpha * kl."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    return (1.0 - alpha) * ce + alpha * kl


def attention_map(activation, power=2):
    """Per-image spatial attention: channel mean of |a|^power, L2-normalized
    over the flattened H*W pixels. An all-zero activation maps to an all-zero
    map rather than dividing by the zero norm."""
    a, _ = attention_map_with_cache(activation, power)
    return a


def attention_map_with_cache(activation, power=2):
    if power < 1:
        raise ValueError(f"power must be >= 1, got {power}")
    raw = np.abs(activation) ** power
    m = raw.mean(axis=1)
    norms = np.sqrt((m * m).sum(axis=(1, 2)))
    safe = np.where(norms > 0, norms, 1.0)
    amap = m / safe[:, None, None]
    cache = (activation, m, amap, norms, power)
    return amap, cache


def attention_map_backward(cache, damap):
    """Gradient of the normalized map w.r.t. the raw activation."""
    activation, m, amap, norms, power = cache
    inner = (amap * damap).sum(axis=(1, 2))
    safe = np.where(norms > 0, norms, 1.0)
    dm = (damap - amap * inner[:, None, None]) / safe[:, None, None]
    dm = np.where(norms[:, None, None] > 0, dm, 0.0)
    c = activation.shape[1]
    da = (dm[:, None, :, :] * power * np.abs(activation) ** (power - 1)
          * np.sign(activation) / c)
    return da.astype(activation.dtype)


def at_loss(a_student, a_teacher):
    """Squared L2 distance of the normalized maps, summed over pixels and
    averaged over the batch."""
    if a_student.shape != a_teacher.shape:
        raise ValueError(f"attention map shapes differ: student "
                         f"{a_student.shape} vs teacher {a_teacher.shape}; "
                         "pick tap points with matching spatial dims")
    n = a_student.shape[0]
    diff = a_student - a_teacher
    return float((diff * diff).sum() / n)


def at_loss_grad(a_student, a_teacher):
    n = a_student.shape[0]
    return 2.0 * (a_student - a_teacher) / n


def total_loss(ce, kl, at, alpha, gamma):
    """(1-alpha)*ce + alpha*kl + gamma*at, with the parts kept visible."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0,1], got {gamma}")
    kd = combine_kd(ce, kl, alpha)
    return LossBreakdown(ce=ce, kl=kl, at=at, total=kd + gamma * at)
