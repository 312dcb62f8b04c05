"""Paired comparisons across seeds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import binomtest


@dataclass(frozen=True)
class SignTest:
    n_greater: int
    n_less: int
    n_ties: int
    p_value: float


def paired_sign_test(a: Sequence[float], b: Sequence[float]) -> SignTest:
    """One-sided sign test of ``a > b`` over paired values; ties are dropped."""
    if len(a) != len(b):
        raise ValueError("paired samples must have equal length")
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    n_greater = int((diff > 0).sum())
    n_less = int((diff < 0).sum())
    n = n_greater + n_less
    p = binomtest(n_greater, n, 0.5, alternative="greater").pvalue if n else 1.0
    return SignTest(n_greater, n_less, len(diff) - n, float(p))


def mean_sd(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sd
