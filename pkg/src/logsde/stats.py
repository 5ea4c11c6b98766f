"""Small estimation helpers shared by the Monte Carlo studies."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm

Z95 = float(norm.ppf(0.975))


def wilson_interval(hits: int, M: int, z: float = Z95):
    """Wilson score interval for a binomial proportion ``hits / M``."""
    if M <= 0:
        return 0.0, 1.0
    p = hits / M
    z2 = z * z
    denom = 1.0 + z2 / M
    centre = (p + z2 / (2 * M)) / denom
    half = z * math.sqrt(p * (1 - p) / M + z2 / (4 * M * M)) / denom
    lo, hi = max(0.0, centre - half), min(1.0, centre + half)
    # guard the endpoints against rounding so the interval always holds p
    return min(lo, p), max(hi, p)


def mean_and_stderr(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size >= 2 else math.nan
    return float(np.mean(x)), se


def ci_separated(est_hi, se_hi, est_lo, se_lo, z=Z95) -> bool:
    """True when the two 95% intervals do not overlap (``hi`` above ``lo``)."""
    return est_hi - z * se_hi > est_lo + z * se_lo
