"""
Paired significance testing for comparing two systems on the same samples.

b counts samples only system A solves, c counts samples only system B
solves. Small discordant counts use the exact mid-p test, larger ones the
continuity-corrected chi-square; a family of comparisons is corrected with
Holm-Bonferroni.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy import stats as sps
from statsmodels.stats.multitest import multipletests

from errors import MetricError

logger = logging.getLogger(__name__)

EXACT_LIMIT = 25
EXACT_MID_P = "exact-mid-p"
CHI2_CORRECTED = "chi2-corrected"


@dataclass(frozen=True)
class McNemarResult:
    b: int
    c: int
    variant_used: str
    statistic: float
    p_value: float


@dataclass(frozen=True)
class HolmResult:
    raw: List[float]
    adjusted: List[float]
    rejected: List[bool]
    alpha: float


def mid_p(b: int, c: int) -> float:
    n = b + c
    if n == 0:
        return 1.0
    k = min(b, c)
    tail = sps.binom.cdf(k - 1, n, 0.5) + 0.5 * sps.binom.pmf(k, n, 0.5)
    return float(min(1.0, 2.0 * tail))


def exact_p(b: int, c: int) -> float:
    """Conventional two-sided exact p (full weight on the observed count)."""
    n = b + c
    if n == 0:
        return 1.0
    return float(min(1.0, 2.0 * sps.binom.cdf(min(b, c), n, 0.5)))


def mcnemar(b: int, c: int) -> McNemarResult:
    if b < 0 or c < 0:
        raise MetricError(f"discordant counts must be non-negative, got b={b}, c={c}")
    if b + c <= EXACT_LIMIT:
        return McNemarResult(b, c, EXACT_MID_P, float(min(b, c)), mid_p(b, c))
    statistic = max(abs(b - c) - 1, 0) ** 2 / (b + c)
    p_value = 1.0 if statistic == 0 else float(sps.chi2.sf(statistic, 1))
    return McNemarResult(b, c, CHI2_CORRECTED, float(statistic), p_value)


def holm_bonferroni(ps: Sequence[float], alpha: float = 0.05) -> HolmResult:
    if not ps:
        raise MetricError("need at least one p-value")
    raw = np.asarray(ps, dtype=float)
    if np.any(~np.isfinite(raw)) or np.any(raw < 0) or np.any(raw > 1):
        raise MetricError(f"p-values must lie in [0, 1]: {list(ps)}")
    if not 0 < alpha < 1:
        raise MetricError(f"alpha must lie in (0, 1), got {alpha}")
    _, adjusted, _, _ = multipletests(raw, alpha=alpha, method="holm")
    adjusted = np.minimum(adjusted, 1.0)
    # decide on the adjusted values so a p exactly at alpha is rejected
    rejected = [bool(p <= alpha) for p in adjusted]
    logger.debug("holm: %d of %d rejected at %.3f", sum(rejected), len(rejected), alpha)
    return HolmResult([float(p) for p in raw], [float(p) for p in adjusted], rejected, alpha)


def discordant_counts(a_flags: Sequence[bool], b_flags: Sequence[bool]):
    """(b, c) from two aligned per-sample pass vectors."""
    if len(a_flags) != len(b_flags):
        raise MetricError("pass vectors differ in length")
    b = sum(1 for x, y in zip(a_flags, b_flags) if x and not y)
    c = sum(1 for x, y in zip(a_flags, b_flags) if y and not x)
    return b, c
