"""
Preference pairs for refusal-aware alignment.

Every source sample yields three kinds of pair:
    match     original diagram; chosen = reference Verilog, rejected = refusal
    blank     blank white image; chosen = refusal, rejected = reference Verilog
    mismatch  another sample's diagram; chosen = refusal, rejected = reference Verilog
Counts are set 4:3:3 over round(2.5 * n_source) pairs.
"""

import logging
import random
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

from errors import HeaderParseError, LexError, PairBuildError
from eval_structs import AlignSample
from verilog_model import ModuleHeader, parse_header

logger = logging.getLogger(__name__)

PROMPT_TEMPLATE = (
    "Please write a Verilog module based on the provided circuit diagram image. "
    "Return only the Verilog code, without any explanation.\n"
    "\n"
    "For example:\n"
    "```verilog\n"
    "your Verilog code here\n"
    "```\n"
    "\n"
    "Module header (must not be changed):\n"
    "{module_header}"
)

REFUSAL_TEMPLATE = (
    "Based on the provided circuit diagram, I cannot accurately determine the "
    "Verilog implementation.\n"
    "\n"
    "The module header provided is:\n"
    "{module_header}\n"
    "\n"
    "However, the provided image does not match the given module header, so I "
    "cannot generate the correct Verilog code with confidence."
)

CATEGORY_SHARES = (("match", Fraction(2, 5)), ("blank", Fraction(3, 10)),
                   ("mismatch", Fraction(3, 10)))
BLANK_IMAGE_REF = "blank.ppm"
BLANK_SIZE = (640, 480)


@dataclass(frozen=True)
class PreferencePair:
    sample_id: str
    category: str
    image_ref: str
    image_kind: str  # original | blank | unrelated
    prompt: str
    chosen: str
    rejected: str
    image_sample_id: Optional[str] = None  # owner of the diagram shown


@dataclass(frozen=True)
class RatioPlan:
    n_match: int
    n_blank: int
    n_mismatch: int

    @property
    def total(self) -> int:
        return self.n_match + self.n_blank + self.n_mismatch


def render_prompt(header: ModuleHeader) -> str:
    return PROMPT_TEMPLATE.replace("{module_header}", header.raw_text)


def render_refusal(header: ModuleHeader) -> str:
    return REFUSAL_TEMPLATE.replace("{module_header}", header.raw_text)


def fence(code: str) -> str:
    return "```verilog\n" + code.strip("\n") + "\n```"


def plan_ratio(n_source: int) -> RatioPlan:
    """Largest-remainder apportionment of 4:3:3; ties go match, blank, mismatch."""
    if n_source < 0:
        raise PairBuildError(f"negative source count {n_source}")
    total = (5 * n_source + 1) // 2  # 2.5 * n rounded half up
    quotas = [(name, share * total) for name, share in CATEGORY_SHARES]
    seats = {name: int(quota) for name, quota in quotas}
    left = total - sum(seats.values())
    # sorted is stable, so equal remainders keep the category order
    by_remainder = sorted(quotas, key=lambda q: q[1] - int(q[1]), reverse=True)
    for name, _ in by_remainder[:left]:
        seats[name] += 1
    return RatioPlan(seats["match"], seats["blank"], seats["mismatch"])


def make_blank_image(width: int = BLANK_SIZE[0], height: int = BLANK_SIZE[1]) -> bytes:
    """All-white binary portable pixmap."""
    if width < 1 or height < 1:
        raise PairBuildError(f"blank image needs positive dimensions, got {width}x{height}")
    return f"P6\n{width} {height}\n255\n".encode("ascii") + b"\xff" * (3 * width * height)


def write_blank_image(path: str, width: int = BLANK_SIZE[0], height: int = BLANK_SIZE[1]) -> str:
    with open(path, "wb") as fp:
        fp.write(make_blank_image(width, height))
    return path


def _parse(sample: AlignSample) -> ModuleHeader:
    try:
        return parse_header(sample.header)
    except (LexError, HeaderParseError) as err:
        raise PairBuildError(f"sample {sample.id}: {err}") from err


def _other_index(rng: random.Random, own: int, n: int) -> int:
    pick = rng.randrange(n - 1)
    return pick + 1 if pick >= own else pick


def build_pairs(samples: Sequence[AlignSample], seed: int = 0,
                blank_ref: str = BLANK_IMAGE_REF) -> List[PreferencePair]:
    """
    Deterministic given (sample order, seed). Match pairs reuse sources
    round-robin if their quota exceeds the source count; blank and mismatch
    sources are drawn without replacement.
    """
    n = len(samples)
    plan = plan_ratio(n)
    if plan.n_mismatch > 0 and n < 2:
        raise PairBuildError("mismatch pairs need at least two samples")
    headers = [_parse(s) for s in samples]
    prompts = [render_prompt(h) for h in headers]
    refusals = [render_refusal(h) for h in headers]
    rng = random.Random(seed)

    pairs = []
    for j in range(plan.n_match):
        i = j % n
        pairs.append(PreferencePair(samples[i].id, "match", samples[i].diagram_ref, "original",
                                    prompts[i], fence(samples[i].code), refusals[i],
                                    samples[i].id))
    for i in sorted(rng.sample(range(n), plan.n_blank)):
        pairs.append(PreferencePair(samples[i].id, "blank", blank_ref, "blank",
                                    prompts[i], refusals[i], fence(samples[i].code)))
    for i in sorted(rng.sample(range(n), plan.n_mismatch)):
        other = _other_index(rng, i, n)
        pairs.append(PreferencePair(samples[i].id, "mismatch", samples[other].diagram_ref,
                                    "unrelated", prompts[i], refusals[i],
                                    fence(samples[i].code), samples[other].id))
    logger.info("built %d pairs (%d match, %d blank, %d mismatch)", len(pairs),
                plan.n_match, plan.n_blank, plan.n_mismatch)
    return pairs


def category_counts(pairs: Sequence[PreferencePair]) -> Dict[str, int]:
    counts = {name: 0 for name, _ in CATEGORY_SHARES}
    for pair in pairs:
        counts[pair.category] += 1
    return counts


def pair_rows(pairs: Sequence[PreferencePair]) -> List[Dict]:
    return [asdict(pair) for pair in pairs]
