"""Agreement between a true and an estimated segmentation of the time axis.

All metrics take label vectors (any hashable integer labels; relabelling
does not change the result) or :class:`Segmentation` objects.  Indicator
vectors are converted with :func:`labels_from_indicator`.  Logarithms are
natural.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .core_model import Segmentation


class PairCounts(NamedTuple):
    """Pairs of time points that are: same/same (a), same in truth but split
    in the estimate (b), split in truth but same in the estimate (c),
    split/split (d)."""

    a: int
    b: int
    c: int
    d: int


class ContingencyTable(NamedTuple):
    joint: np.ndarray
    truth_sizes: np.ndarray
    estimate_sizes: np.ndarray

    @property
    def total(self) -> int:
        return int(self.truth_sizes.sum())


def labels_from_indicator(indicator) -> np.ndarray:
    """Segment labels 1..M from a change-point indicator (first entry must be 1)."""
    ind = np.asarray(indicator, dtype=np.int64)
    if ind.ndim != 1 or ind.size == 0 or ind[0] != 1 or np.any((ind != 0) & (ind != 1)):
        raise ValueError("indicator must be a 0/1 vector starting with 1")
    return np.cumsum(ind)


def _as_labels(x) -> np.ndarray:
    if isinstance(x, Segmentation):
        return x.labels
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    return arr


def contingency(truth, estimate) -> ContingencyTable:
    z = _as_labels(truth)
    zh = _as_labels(estimate)
    if z.shape != zh.shape:
        raise ValueError(f"length mismatch: {z.size} vs {zh.size}")
    _, zi = np.unique(z, return_inverse=True)
    _, hi = np.unique(zh, return_inverse=True)
    joint = np.zeros((zi.max(initial=-1) + 1, hi.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(joint, (zi, hi), 1)
    return ContingencyTable(joint, joint.sum(axis=1), joint.sum(axis=0))


def _choose2(n) -> int:
    n = np.asarray(n, dtype=np.int64)
    return int((n * (n - 1) // 2).sum())


def pair_counts(truth, estimate) -> PairCounts:
    tab = contingency(truth, estimate)
    same_both = _choose2(tab.joint)
    same_truth = _choose2(tab.truth_sizes)
    same_est = _choose2(tab.estimate_sizes)
    total = _choose2(tab.total)
    a = same_both
    b = same_truth - same_both
    c = same_est - same_both
    d = total - a - b - c
    return PairCounts(a, b, c, d)


def ari(truth, estimate) -> float:
    """Adjusted Rand index from pair counts.

    The formula is 0/0 only when both partitions are all-in-one or both are
    all-singletons; those partitions are identical and score 1.
    """
    a, b, c, d = pair_counts(truth, estimate)
    n = a + b + c + d
    expected = (a + b) * (a + c) + (c + d) * (b + d)
    denom = n * n - expected
    if denom == 0:
        return 1.0
    return (n * (a + d) - expected) / denom


def _mi_terms(tab: ContingencyTable) -> float:
    T = tab.total
    nz = tab.joint > 0
    joint = tab.joint[nz].astype(float)
    outer = np.outer(tab.truth_sizes, tab.estimate_sizes)[nz].astype(float)
    return float(np.sum(joint * np.log(joint * T / outer)))


def _entropy_terms(sizes: np.ndarray, T: int) -> float:
    s = sizes[sizes > 0].astype(float)
    return float(-np.sum(s * np.log(s / T)))


def mutual_information(truth, estimate) -> float:
    tab = contingency(truth, estimate)
    if tab.total == 0:
        raise ValueError("empty partitions")
    # tiny negative values from rounding are clipped; MI is nonnegative
    return max(_mi_terms(tab) / tab.total, 0.0)


def nvi(truth, estimate) -> float:
    """Variation of information divided by its bound ``log T`` (0 when T = 1)."""
    tab = contingency(truth, estimate)
    T = tab.total
    if T == 0:
        raise ValueError("empty partitions")
    if T == 1:
        return 0.0
    vi = _entropy_terms(tab.truth_sizes, T) + _entropy_terms(tab.estimate_sizes, T)
    vi -= 2.0 * _mi_terms(tab)
    return min(max(vi / (T * math.log(T)), 0.0), 1.0)


def f_measure(truth, estimate) -> float:
    tab = contingency(truth, estimate)
    T = tab.total
    if T == 0:
        raise ValueError("empty partitions")
    ratio = tab.joint / (tab.truth_sizes[:, None] + tab.estimate_sizes[None, :])
    return float(2.0 / T * np.sum(tab.truth_sizes * ratio.max(axis=1)))


def all_metrics(truth, estimate) -> dict[str, float]:
    return {
        "ari": ari(truth, estimate),
        "f_measure": f_measure(truth, estimate),
        "mutual_information": mutual_information(truth, estimate),
        "nvi": nvi(truth, estimate),
    }
