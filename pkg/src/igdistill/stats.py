"""Run statistics: paired t-test, seeded Monte Carlo Lilliefors normality
test, summary aggregation, and the relative accuracy-recovery metric.
"""

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps


@dataclass
class StatsSummary:
    mean: float
    median: float
    std: float
    max: float
    min: float
    ci95_halfwidth: float
    n: int
    t_stat: float | None = None
    p_value: float | None = None
    ksstat: float | None = None
    lilliefors_p: float | None = None


def paired_t_test(a, b):
    """Two-sided paired t-test on differences a - b, paired by run index.

    Zero-variance differences are degenerate: p is exactly 1.0 when the mean
    difference is 0, otherwise t is reported as signed infinity with p 0.0
    (the all-identical-nonzero-difference limit).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be equal-length 1-d arrays, "
                         f"got {a.shape} and {b.shape}")
    n = len(a)
    if n < 2:
        raise ValueError(f"need at least 2 pairs, got {n}")
    d = a - b
    sd = d.std(ddof=1)
    mean = d.mean()
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * float(sps.t.sf(abs(t), df=n - 1))
    return float(t), p


def _lilliefors_stat(x):
    x = np.sort(np.asarray(x, dtype=np.float64))
    n = len(x)
    sd = x.std(ddof=1)
    if sd == 0.0:
        raise ValueError("samples have zero variance; the normal fit is "
                         "degenerate")
    z = (x - x.mean()) / sd
    cdf = sps.norm.cdf(z)
    upper = (np.arange(1, n + 1) / n - cdf).max()
    lower = (cdf - np.arange(0, n) / n).max()
    return float(max(upper, lower))


@functools.lru_cache(maxsize=64)
def _lilliefors_null(n, n_sims, seed):
    """Simulated null distribution of the statistic for sample size n;
    location-scale invariance makes standard-normal draws sufficient."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(n,)))
    sims = np.empty(n_sims)
    for i in range(n_sims):
        sims[i] = _lilliefors_stat(rng.standard_normal(n))
    return np.sort(sims)


def lilliefors(samples, n_sims=10000, seed=771177):
    """Normality test with estimated mean/variance: the KS statistic against
    Normal(mean, std), with the p-value taken from a seeded Monte Carlo null
    distribution of the same sample size."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < 4:
        raise ValueError(f"need at least 4 samples, got {len(samples)}")
    ks = _lilliefors_stat(samples)
    null = _lilliefors_null(len(samples), n_sims, seed)
    count_ge = len(null) - np.searchsorted(null, ks, side="left")
    p = (count_ge + 1) / (n_sims + 1)
    return ks, float(p)


def summarize(records, baseline_records=None, n_sims=10000):
    """StatsSummary over final test accuracies; when baseline records are
    given, a paired t-test against them is included. std is the sample
    standard deviation (0 for a single record)."""
    accs = np.asarray([r.final_test_accuracy for r in records],
                      dtype=np.float64)
    if len(accs) == 0:
        raise ValueError("no records to summarize")
    std = float(accs.std(ddof=1)) if len(accs) > 1 else 0.0
    summary = StatsSummary(
        mean=float(accs.mean()), median=float(np.median(accs)), std=std,
        max=float(accs.max()), min=float(accs.min()),
        ci95_halfwidth=1.96 * std / math.sqrt(len(accs)), n=len(accs))
    if baseline_records is not None:
        base = np.asarray([r.final_test_accuracy for r in baseline_records],
                          dtype=np.float64)
        summary.t_stat, summary.p_value = paired_t_test(accs, base)
    if len(accs) >= 4 and accs.std(ddof=1) > 0:
        summary.ksstat, summary.lilliefors_p = lilliefors(accs,
                                                          n_sims=n_sims)
    return summary


def relative_delta_acc(teacher, baseline, distilled):
    """Percent of the teacher-baseline gap recovered:
    100 * (distilled - baseline) / (teacher - baseline)."""
    if teacher == baseline:
        raise ValueError("teacher and baseline accuracies coincide; the "
                         "relative gap is undefined")
    return 100.0 * (distilled - baseline) / (teacher - baseline)
