"""Small statistical helpers shared by the estimators."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def wilson_interval(successes: int, trials: int, confidence: float = 0.9973) -> tuple[float, float]:
    """Wilson score interval; the default level matches a 3 sigma band."""
    if trials <= 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(confidence_level=confidence,
                                                                     method="wilson")
    return float(ci.low), float(ci.high)


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def within_sigmas(estimate: float, truth: float, n: int, k: float = 3.0) -> bool:
    """|estimate - truth| <= k sigma with sigma from the true Bernoulli variance.

    A degenerate truth (0 or 1) demands an exact match.
    """
    sd = binomial_sigma(truth, n)
    return abs(estimate - truth) <= k * sd + 1e-15


def mean_and_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()) if x.size else math.nan, math.inf
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))
