"""Expected cache behaviour of permutation sampling.

A permutation of ``k`` features visits ``k + 1`` coalitions, one of each size.
A coalition of size ``s`` is one of ``C(k, s)`` equally likely choices, which
gives closed forms for how many coalitions are new at the ``n``-th permutation
and how many have been seen after ``n`` permutations.
"""

from __future__ import annotations

import math

import numpy as np


def _miss_log(k: int) -> np.ndarray:
    # log(1 - 1/C(k, s)) for s = 0..k; -inf where C(k, s) == 1
    c = np.array([math.comb(k, s) for s in range(k + 1)], dtype=float)
    with np.errstate(divide="ignore"):
        return np.log1p(-1.0 / c)


def expected_uncached_ratio(n: int, k: int) -> float:
    """Expected fraction of the ``k + 1`` coalitions of the ``n``-th permutation not seen before."""
    if n < 1 or k < 1:
        raise ValueError("n and k must be at least 1")
    if n == 1:
        return 1.0
    terms = np.exp((n - 1) * _miss_log(k))
    return float(terms.sum() / (k + 1))


def expected_coverage(n: int, k: int) -> float:
    """Expected fraction of all ``2**k`` coalitions seen after ``n`` permutations."""
    if n < 1 or k < 1:
        raise ValueError("n and k must be at least 1")
    log_c = np.array([math.lgamma(k + 1) - math.lgamma(s + 1) - math.lgamma(k - s + 1) for s in range(k + 1)])
    # sum of P(size s) * P(a given size-s coalition was hit); expm1 keeps tiny coverages positive
    seen = -np.expm1(n * _miss_log(k))
    return float(min(1.0, np.dot(np.exp(log_c - k * math.log(2)), seen)))


def budget_for_coverage(target: float, k: int) -> int:
    """Smallest permutation count whose expected coverage reaches ``target``."""
    if not 0 < target < 1:
        raise ValueError("target must lie strictly between 0 and 1")
    if k < 1:
        raise ValueError("k must be at least 1")
    if expected_coverage(1, k) >= target:
        return 1
    hi = 2
    while expected_coverage(hi, k) < target:
        hi *= 2
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if expected_coverage(mid, k) >= target:
            hi = mid
        else:
            lo = mid
    return hi
