"""Two-sample statistics: Kolmogorov-Smirnov, Wasserstein-1, AUC, subsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .tabular import rng_for, round_half_up


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n1: int
    n2: int


@dataclass(frozen=True)
class BootstrapSpec:
    n_draws: int = 1000
    fraction: float = 0.632
    seed: int = 0

    def __post_init__(self):
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")


def _vector(a, name):
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    return a


def ks_survival(lam: float) -> float:
    """Kolmogorov distribution tail ``2 * sum (-1)^(k-1) exp(-2 k^2 lam^2)``."""
    total = 0.0
    sign = 1.0
    for k in range(1, 101):
        term = math.exp(-2.0 * k * k * lam * lam)
        total += sign * term
        if term < 1e-16:
            return min(1.0, max(0.0, 2.0 * total))
        sign = -sign
    # no convergence within 100 terms only happens for lam < ~0.05, where
    # the tail equals 1 to double precision
    return 1.0


def ks_two_sample(a, b) -> KsResult:
    """Two-sample KS statistic with the asymptotic p-value.

    ``lam = (sqrt(m) + 0.12 + 0.11 / sqrt(m)) * D`` with ``m = n1 n2 / (n1 + n2)``.
    """
    a = np.sort(_vector(a, "a"))
    b = np.sort(_vector(b, "b"))
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / n1
    cdf_b = np.searchsorted(b, pooled, side="right") / n2
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    m = n1 * n2 / (n1 + n2)
    root = math.sqrt(m)
    p = ks_survival((root + 0.12 + 0.11 / root) * d)
    return KsResult(d, p, n1, n2)


def wasserstein1(a, b) -> float:
    """Exact 1-D earth mover's distance ``int |F_a - F_b|`` between samples."""
    a = np.sort(_vector(a, "a"))
    b = np.sort(_vector(b, "b"))
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    pooled = np.sort(np.concatenate([a, b]))
    widths = np.diff(pooled)
    cdf_a = np.searchsorted(a, pooled[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, pooled[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC, ``P(s+ > s-) + P(s+ = s-) / 2``, via average ranks."""
    s = _vector(scores, "scores")
    y = np.asarray(labels).reshape(-1)
    if y.size != s.size:
        raise ValueError("scores and labels differ in length")
    pos = y == 1
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    n_pos = int(pos.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def bootstrap_indices(n: int, spec: BootstrapSpec):
    """``spec.n_draws`` subsets drawn without replacement, each of size
    ``round_half_up(spec.fraction * n)``."""
    if n < 2:
        raise ValueError("need at least 2 rows to subsample")
    size = round_half_up(spec.fraction * n)
    if size < 1 or size > n:
        raise ValueError(f"subset size {size} invalid for n={n}")
    rng = rng_for(spec.seed, 3)
    return [rng.permutation(n)[:size] for _ in range(spec.n_draws)]
