"""
Pass@k estimation, paired outcome breakdowns and refusal calibration.

Pass@k uses the unbiased estimator 1 - C(n-c, k) / C(n, k), evaluated as a
product so it stays exact for large n.
"""

import logging
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import MetricError

logger = logging.getLogger(__name__)

VARIANTS = ("normal", "anony")
MODES = ("original", "mirage", "mismatch")
KINDS = ("syntax", "functional")

DEFAULT_REFUSAL_PHRASE = "i cannot accurately determine the verilog implementation"

_SPACES = re.compile(r"\s+")


@dataclass(frozen=True)
class ProblemOutcome:
    sample_id: str
    variant: str
    mode: str
    n: int
    c_syntax: int
    c_func: int
    refusals: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise MetricError(f"unknown variant {self.variant!r}")
        if self.mode not in MODES:
            raise MetricError(f"unknown mode {self.mode!r}")
        if not 0 <= self.c_func <= self.c_syntax <= self.n:
            raise MetricError(f"{self.sample_id}: need 0 <= c_func <= c_syntax <= n, "
                              f"got {self.c_func}, {self.c_syntax}, {self.n}")
        # a refused completion is never a syntax pass
        if not 0 <= self.refusals <= self.n - self.c_syntax:
            raise MetricError(f"{self.sample_id}: refusals out of range ({self.refusals})")

    def passes(self, kind: str) -> int:
        if kind == "syntax":
            return self.c_syntax
        if kind == "functional":
            return self.c_func
        raise MetricError(f"unknown kind {kind!r}")


@dataclass(frozen=True)
class BreakdownRow:
    both: float
    original_only: float
    mirage_only: float
    neither: float

    def as_percentages(self) -> Tuple[float, float, float, float]:
        return tuple(round_half_up(100 * v) for v in
                     (self.both, self.original_only, self.mirage_only, self.neither))


@dataclass(frozen=True)
class RefusalTemplateConfig:
    key_phrase: str = DEFAULT_REFUSAL_PHRASE

    def __post_init__(self):
        if not normalize(self.key_phrase):
            raise MetricError("refusal key phrase must be non-empty")


@dataclass(frozen=True)
class RefusalRates:
    frr: Optional[float]
    rr: Optional[float]
    mrr: Optional[float]


def normalize(text: str) -> str:
    return _SPACES.sub(" ", text.lower()).strip()


def round_half_up(value: float, places: int = 2) -> float:
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def pass_at_k(n: int, c: int, k: int) -> float:
    if n < 0 or c < 0 or k < 1:
        raise MetricError(f"invalid pass@k arguments n={n}, c={c}, k={k}")
    if c > n:
        raise MetricError(f"c={c} exceeds n={n}")
    if k > n:
        raise MetricError(f"k={k} exceeds n={n}")
    if k == 1:
        return c / n
    if n - c < k:
        return 1.0
    return float(1.0 - np.prod(1.0 - k / np.arange(n - c + 1, n + 1)))


def aggregate_pass_at_k(outcomes: Sequence[ProblemOutcome], k: int,
                        kind: str = "functional") -> float:
    """Mean per-problem pass@k as a percentage, unrounded."""
    if not outcomes:
        raise MetricError("no outcomes to aggregate")
    scores = [pass_at_k(o.n, o.passes(kind), k) for o in outcomes]
    return 100.0 * float(np.mean(scores))


def detect_refusal(response: str, cfg: RefusalTemplateConfig = RefusalTemplateConfig()) -> bool:
    return normalize(cfg.key_phrase) in normalize(response)


def outcome_breakdown(paired: Iterable[Tuple[bool, bool]]) -> BreakdownRow:
    counts = {(True, True): 0, (True, False): 0, (False, True): 0, (False, False): 0}
    for original, mirage in paired:
        counts[(bool(original), bool(mirage))] += 1
    total = sum(counts.values())
    if total == 0:
        raise MetricError("outcome breakdown needs at least one pair")
    return BreakdownRow(counts[(True, True)] / total, counts[(True, False)] / total,
                        counts[(False, True)] / total, counts[(False, False)] / total)


def _rate(flags: List[bool]) -> Optional[float]:
    if not flags:
        return None
    return 100.0 * sum(flags) / len(flags)


def refusal_rates(records: Iterable[Tuple[str, bool, bool]]) -> RefusalRates:
    """
    records are (mode, refused, valid_input). FRR counts refusals on valid
    original-diagram inputs, RR on blank (mirage) inputs and MRR on
    mismatched inputs. A rate with an empty denominator is None.
    """
    by_mode = {mode: [] for mode in MODES}
    for mode, refused, valid_input in records:
        if mode not in by_mode:
            raise MetricError(f"unknown mode {mode!r}")
        if mode == "original" and not valid_input:
            continue
        by_mode[mode].append(bool(refused))
    rates = RefusalRates(_rate(by_mode["original"]), _rate(by_mode["mirage"]),
                         _rate(by_mode["mismatch"]))
    logger.debug("refusal rates %s", rates)
    return rates
