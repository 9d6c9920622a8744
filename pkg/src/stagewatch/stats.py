"""Hypothesis tests backing the learned factor functions.

Three tests, one per behavioral trait: a 1-dof chi-squared test for single
event severity, a two-sided Fisher exact test for shared event patterns, and
a permutation Durbin-Watson test for periodic event counts.  All return
p-values under the null "the system is not under attack"; the training layer
keeps only results at or below its significance threshold.

Pure functions, safe to call concurrently.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

FISHER_ENUMERATION_BOUND = 10_000

# Relative slack when comparing hypergeometric point probabilities, so that
# ties computed in floating point still count as "at least as extreme".
_FISHER_REL_TOL = 1e-7


class DegenerateTableError(ValueError):
    """A margin of the 2x2 table is zero; the test carries no information."""


class DegenerateSeriesError(ValueError):
    """Constant or too-short count series; autocorrelation is undefined."""


class EnumerationBoundError(ValueError):
    """Table total exceeds the exact-enumeration bound; fall back to chi-squared."""


class ContingencyTable2x2(NamedTuple):
    """Counts: rows = target pattern / complement, cols = attack-stage / benign."""

    a: int
    b: int
    c: int
    d: int

    def validate(self) -> "ContingencyTable2x2":
        if any(x < 0 for x in self):
            raise ValueError(f"negative count in {self}")
        if sum(self) <= 0:
            raise ValueError("empty table")
        return self

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d


def chi_squared_statistic(t: ContingencyTable2x2) -> float:
    """X^2 = N(ad-bc)^2 / ((a+b)(c+d)(a+c)(b+d)), no continuity correction."""
    a, b, c, d = t.validate()
    r1, r2, c1, c2 = a + b, c + d, a + c, b + d
    if 0 in (r1, r2, c1, c2):
        raise DegenerateTableError(f"zero margin in {t}")
    n = t.total
    return n * (a * d - b * c) ** 2 / (r1 * r2 * c1 * c2)


def chi_squared_p(t: ContingencyTable2x2) -> float:
    """Survival probability of the 1-dof chi-squared statistic: erfc(sqrt(X^2/2))."""
    x2 = chi_squared_statistic(t)
    return math.erfc(math.sqrt(x2 / 2.0))


def _log_hypergeom_pmf(k: int, r1: int, r2: int, c1: int) -> float:
    # P(a = k) with fixed margins: C(r1, k) C(r2, c1-k) / C(r1+r2, c1)
    return (
        _log_comb(r1, k)
        + _log_comb(r2, c1 - k)
        - _log_comb(r1 + r2, c1)
    )


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def fisher_exact_p(t: ContingencyTable2x2, enumeration_bound: int = FISHER_ENUMERATION_BOUND) -> float:
    """Two-sided Fisher exact p: total probability of tables (same margins)
    no more likely than the observed one."""
    a, b, c, d = t.validate()
    if t.total > enumeration_bound:
        raise EnumerationBoundError(
            f"table total {t.total} exceeds enumeration bound {enumeration_bound}; "
            "use chi_squared_p instead"
        )
    r1, r2, c1 = a + b, c + d, a + c
    if 0 in (r1, r2, c1, b + d):
        raise DegenerateTableError(f"zero margin in {t}")
    lo = max(0, c1 - r2)
    hi = min(r1, c1)
    log_obs = _log_hypergeom_pmf(a, r1, r2, c1)
    cutoff = log_obs + math.log1p(_FISHER_REL_TOL)
    p = 0.0
    for k in range(lo, hi + 1):
        lp = _log_hypergeom_pmf(k, r1, r2, c1)
        if lp <= cutoff:
            p += math.exp(lp)
    return min(p, 1.0)


def durbin_watson_statistic(values: Sequence[float]) -> float:
    """d = sum of squared first differences over squared deviations from the mean."""
    x = np.asarray(values, dtype=float)
    if x.size < 3:
        raise DegenerateSeriesError(f"series length {x.size} < 3")
    centered = x - x.mean()
    denom = float(np.sum(centered**2))
    if denom == 0.0:
        raise DegenerateSeriesError("constant series")
    num = float(np.sum(np.diff(centered) ** 2))
    return num / denom


def durbin_watson_p(
    values: Sequence[float], permutations: int = 1000, seed: int = 0
) -> tuple[float, float]:
    """One-sided permutation test for positive autocorrelation.

    Small d means neighboring counts move together; the p-value is the
    (add-one smoothed) fraction of seeded shuffles whose d is at most the
    observed one.  Same seed, same bits.
    """
    d_obs = durbin_watson_statistic(values)
    x = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(permutations):
        perm = rng.permutation(x)
        centered = perm - perm.mean()
        d = float(np.sum(np.diff(centered) ** 2)) / float(np.sum(centered**2))
        if d <= d_obs:
            hits += 1
    p = (hits + 1) / (permutations + 1)
    return d_obs, p
