"""Nonparametric two-sample comparison of execution-time measurements.

The comparison combines a two-sided Wilcoxon rank-sum test with Cliff's
Delta effect size.  A deviation counts as significant only when the test
rejects at ``alpha`` *and* the effect size is at least "small".

Exact p-values are computed for small pooled samples by counting the
permutation distribution of the (mid-)rank sum with a subset-sum dynamic
program; larger samples use the normal approximation with tie and
continuity correction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import InputError

__all__ = [
    "DEFAULT_ALPHA",
    "EXACT_THRESHOLD",
    "MAGNITUDE_THRESHOLDS",
    "DeviationReport",
    "check_sample",
    "cliffs_delta",
    "compare",
    "magnitude",
    "wilcoxon_rank_sum",
]

DEFAULT_ALPHA = 0.05

# Pooled sample size up to which the permutation distribution is enumerated.
EXACT_THRESHOLD = 16

# Upper bounds (exclusive) on |delta| for each magnitude class.
MAGNITUDE_THRESHOLDS: tuple[tuple[float, str], ...] = (
    (0.147, "negligible"),
    (0.33, "small"),
    (0.474, "medium"),
)

MAGNITUDES = ("negligible", "small", "medium", "large")


def check_sample(values: Sequence[float], name: str = "sample") -> np.ndarray:
    """Validate a duration sample and return it as a float array."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise InputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    if np.any(arr < 0):
        raise InputError(f"{name} contains negative durations")
    return arr


def _doubled_midranks(pooled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (2 * midrank per value, tie-group sizes) as integer arrays."""
    _, inverse, counts = np.unique(pooled, return_inverse=True, return_counts=True)
    before = np.concatenate(([0], np.cumsum(counts)[:-1]))
    # midrank of a tie group = before + (count + 1) / 2, doubled to stay integral
    doubled = 2 * before + counts + 1
    return doubled[inverse].astype(np.int64), counts.astype(np.int64)


def _exact_p(doubled: np.ndarray, n1: int) -> float:
    """Two-sided permutation p-value of the rank sum of the first ``n1`` items.

    Counts, over all C(N, n1) ways to pick the first sample's ranks, how many
    rank sums lie at least as far from their expectation as the observed one.
    """
    N = doubled.size
    observed = int(doubled[:n1].sum())
    expected = n1 * (N + 1)  # doubled expectation of the rank sum
    max_sum = int(doubled.sum())
    # counts[k, s]: number of k-subsets with doubled rank sum s
    counts = np.zeros((n1 + 1, max_sum + 1), dtype=np.int64)
    counts[0, 0] = 1
    for i, v in enumerate(doubled.tolist()):
        top = min(i + 1, n1)
        for k in range(top, 0, -1):
            counts[k, v:] += counts[k - 1, : max_sum + 1 - v]
    dist = counts[n1]
    sums = np.arange(max_sum + 1)
    extreme = np.abs(sums - expected) >= abs(observed - expected)
    return float(dist[extreme].sum()) / float(math.comb(N, n1))


def _normal_p(doubled: np.ndarray, ties: np.ndarray, n1: int, n2: int) -> float:
    N = n1 + n2
    rank_sum = doubled[:n1].sum() / 2.0
    u = rank_sum - n1 * (n1 + 1) / 2.0
    mean = n1 * n2 / 2.0
    tie_term = float(np.sum(ties.astype(float) ** 3 - ties))
    var = n1 * n2 / 12.0 * ((N + 1) - tie_term / (N * (N - 1)))
    if var <= 0.0:
        return 1.0
    dev = max(abs(u - mean) - 0.5, 0.0)
    if dev == 0.0:
        return 1.0
    z = dev / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def wilcoxon_rank_sum(x: Sequence[float], y: Sequence[float]) -> float:
    """Two-sided Wilcoxon rank-sum (Mann-Whitney) p-value.

    Exact when ``len(x) + len(y) <= EXACT_THRESHOLD`` (ties handled with
    mid-ranks), otherwise the tie-corrected normal approximation with
    continuity correction.  Returns 1.0 when the statistic sits exactly on
    its null expectation.
    """
    xa = check_sample(x, "x")
    ya = check_sample(y, "y")
    n1, n2 = xa.size, ya.size
    doubled, ties = _doubled_midranks(np.concatenate([xa, ya]))
    if n1 + n2 <= EXACT_THRESHOLD:
        return _exact_p(doubled, n1)
    return _normal_p(doubled, ties, n1, n2)


def dominance_counts(x: Sequence[float], y: Sequence[float]) -> tuple[int, int]:
    """Return ``(#{x_i > y_j}, #{x_i < y_j})`` over all pairs, in O(n log n)."""
    xa = check_sample(x, "x")
    ys = np.sort(check_sample(y, "y"))
    greater = int(np.searchsorted(ys, xa, side="left").sum())
    less = int((ys.size - np.searchsorted(ys, xa, side="right")).sum())
    return greater, less


def cliffs_delta(x: Sequence[float], y: Sequence[float]) -> float:
    """Cliff's Delta: P(x > y) - P(x < y) over all cross pairs."""
    greater, less = dominance_counts(x, y)
    return (greater - less) / (len(x) * len(y))


def magnitude(delta: float) -> str:
    """Classify ``|delta|`` as negligible / small / medium / large."""
    if not (-1.0 <= delta <= 1.0):
        raise InputError(f"Cliff's delta out of range [-1, 1]: {delta!r}")
    d = abs(delta)
    for bound, label in MAGNITUDE_THRESHOLDS:
        if d < bound:
            return label
    return "large"


@dataclass(frozen=True)
class DeviationReport:
    """Outcome of comparing a baseline sample with an updated one.

    ``delta`` is computed as cliffs_delta(baseline, updated), so a slower
    updated version yields a negative delta and a positive ``md_ms``.
    """

    p_value: float
    delta: float
    magnitude: str
    md_ms: float
    significant: bool
    n_baseline: int = 0
    n_updated: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DeviationReport":
        return cls(**data)


def compare(
    baseline: Sequence[float],
    updated: Sequence[float],
    alpha: float = DEFAULT_ALPHA,
) -> DeviationReport:
    """Compare two samples and decide whether the updated one deviates."""
    if not (0.0 < alpha < 1.0):
        raise InputError(f"alpha must be in (0, 1), got {alpha!r}")
    base = check_sample(baseline, "baseline")
    upd = check_sample(updated, "updated")
    p = wilcoxon_rank_sum(base, upd)
    delta = cliffs_delta(base, upd)
    mag = magnitude(delta)
    md = float(upd.mean() - base.mean())
    return DeviationReport(
        p_value=p,
        delta=delta,
        magnitude=mag,
        md_ms=md,
        significant=bool(p <= alpha and mag != "negligible"),
        n_baseline=int(base.size),
        n_updated=int(upd.size),
    )
