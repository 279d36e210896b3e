"""
Corpus curation: Rouge-L decontamination against the test set, visual
token budget filtering, alignment/SFT split and token-count statistics.

Stage order for a full curation run:
    synth -> decontaminate -> difficulty -> render -> budget
"""

import logging
import math
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from errors import CorpusError, LexError
from sim_orchestrator import CommandRunner, ToolchainConfig, check_synthesizable, render_diagram
from verilog_model import code_tokens, lex

logger = logging.getLogger(__name__)

DECONTAMINATION_THRESHOLD = 0.5
MAX_VISUAL_TOKENS = 2048
ALIGN_POOL_SIZE = 5000
# precomputed by the external difficulty filter
TOO_EASY = "too_easy"


@dataclass
class CorpusEntry:
    id: str
    source_text: str
    token_count_visual: Optional[int] = None
    header_token_count: Optional[int] = None
    flags: Set[str] = field(default_factory=set)
    diagram_ref: Optional[str] = None

    @classmethod
    def from_dict(cls, data: Dict) -> "CorpusEntry":
        if "id" not in data:
            raise CorpusError("corpus entry without id")
        return cls(str(data["id"]), data.get("source_text", data.get("source", "")),
                   data.get("token_count"), data.get("header_token_count"),
                   set(data.get("flags", ())), data.get("diagram_ref"))

    def to_dict(self) -> Dict:
        return {
            "id": self.id,
            "source_text": self.source_text,
            "token_count": self.token_count_visual,
            "header_token_count": self.header_token_count,
            "flags": sorted(self.flags),
            "diagram_ref": self.diagram_ref,
        }


@dataclass(frozen=True)
class Removal:
    id: str
    reason: str
    test_id: Optional[str] = None
    score: Optional[float] = None


def tokenize(text: str) -> List[str]:
    """Code tokens from the lexer; comments and whitespace dropped."""
    try:
        return [tok.text for tok in code_tokens(lex(text))]
    except LexError:
        return text.split()


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(reference: Sequence, candidate: Sequence) -> float:
    lcs = lcs_length(reference, candidate)
    if lcs == 0:
        return 0.0
    recall = lcs / len(reference)
    precision = lcs / len(candidate)
    return 2 * recall * precision / (recall + precision)


def _best_match(args) -> Tuple[Optional[str], float]:
    tokens, test_tokens = args
    best_id, best = None, 0.0
    for test_id, ref in test_tokens:
        score = rouge_l(ref, tokens)
        if score > best:
            best_id, best = test_id, score
    return best_id, best


def decontaminate(corpus: Sequence[CorpusEntry], testset: Sequence[CorpusEntry],
                  threshold: float = DECONTAMINATION_THRESHOLD,
                  jobs: int = 1) -> Tuple[List[CorpusEntry], List[Removal]]:
    """Drop entries whose best Rouge-L against any test entry exceeds threshold."""
    if not 0 < threshold <= 1:
        raise CorpusError(f"threshold must lie in (0, 1], got {threshold}")
    if not testset:
        logger.warning("empty test set; nothing to decontaminate against")
        for entry in corpus:
            entry.flags.add("decontaminated")
        return list(corpus), []
    test_tokens = [(t.id, tokenize(t.source_text)) for t in testset]
    work = [(tokenize(entry.source_text), test_tokens) for entry in corpus]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            best = list(pool.map(_best_match, work, chunksize=16))
    else:
        best = [_best_match(item) for item in work]

    kept, removed = [], []
    for entry, (test_id, score) in zip(corpus, best):
        if score > threshold:
            removed.append(Removal(entry.id, "contaminated", test_id, score))
        else:
            entry.flags.add("decontaminated")
            kept.append(entry)
    logger.info("decontaminate: kept %d, removed %d", len(kept), len(removed))
    return kept, removed


def token_budget_filter(entries: Iterable[CorpusEntry], max_tokens: int = MAX_VISUAL_TOKENS
                        ) -> Tuple[List[CorpusEntry], List[Removal]]:
    if max_tokens < 1:
        raise CorpusError(f"max_tokens must be >= 1, got {max_tokens}")
    kept, removed = [], []
    for entry in entries:
        if entry.token_count_visual is None:
            removed.append(Removal(entry.id, "uncounted"))
        elif entry.token_count_visual > max_tokens:
            removed.append(Removal(entry.id, f"over budget ({entry.token_count_visual})"))
        else:
            entry.flags.add("budget_ok")
            kept.append(entry)
    logger.info("token budget %d: kept %d, removed %d", max_tokens, len(kept), len(removed))
    return kept, removed


@dataclass(frozen=True)
class CorpusStats:
    count: int
    mean: float
    median: float
    deciles: Tuple[float, ...]
    histogram: Tuple[Tuple[float, float, int], ...]  # (low edge, high edge, count)
    cdf: Tuple[Tuple[float, float], ...]  # (value, fraction <= value)


def nearest_rank(ordered: Sequence[float], q: float) -> float:
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


def corpus_stats(counts: Iterable[Optional[float]], bins: int = 20) -> CorpusStats:
    """Statistics over the present counts; None entries are skipped."""
    values = sorted(float(c) for c in counts if c is not None)
    if not values:
        raise CorpusError("no counted entries")
    n = len(values)
    hist, edges = np.histogram(values, bins=bins)
    uniq, index = np.unique(values, return_index=True)
    # fraction of values <= each distinct value
    upto = np.append(index[1:], n)
    return CorpusStats(
        count=n,
        mean=float(np.mean(values)),
        median=values[(n - 1) // 2],
        deciles=tuple(nearest_rank(values, d / 10) for d in range(1, 10)),
        histogram=tuple((float(lo), float(hi), int(c))
                        for lo, hi, c in zip(edges[:-1], edges[1:], hist)),
        cdf=tuple((float(v), float(u) / n) for v, u in zip(uniq, upto)),
    )


def split_alignment_pool(entries: Sequence[CorpusEntry], n_align: int = ALIGN_POOL_SIZE,
                         seed: int = 0) -> Tuple[List[CorpusEntry], List[CorpusEntry]]:
    """Disjoint (alignment, sft) pools, each in corpus order."""
    if not 0 <= n_align <= len(entries):
        raise CorpusError(f"cannot reserve {n_align} of {len(entries)} entries")
    chosen = set(random.Random(seed).sample(range(len(entries)), n_align))
    align = [e for i, e in enumerate(entries) if i in chosen]
    sft = [e for i, e in enumerate(entries) if i not in chosen]
    return align, sft


@dataclass
class CurationResult:
    kept: List[CorpusEntry]
    survivors: List[Tuple[str, int]] = field(default_factory=list)
    removed: Dict[str, List[Removal]] = field(default_factory=dict)


def _source_file(entry: CorpusEntry, out_dir: str) -> str:
    path = os.path.join(out_dir, "src", entry.id + ".v")
    with open(path, "w", encoding="utf-8") as fp:
        fp.write(entry.source_text)
    return path


def run_curation(entries: Sequence[CorpusEntry], testset: Sequence[CorpusEntry],
                 cfg: ToolchainConfig, runner: CommandRunner, out_dir: str,
                 threshold: float = DECONTAMINATION_THRESHOLD,
                 max_tokens: int = MAX_VISUAL_TOKENS) -> CurationResult:
    os.makedirs(os.path.join(out_dir, "src"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "diagrams"), exist_ok=True)
    result = CurationResult(kept=[])
    current = list(entries)

    synth_ok, dropped = [], []
    for entry in current:
        passed, _ = check_synthesizable(_source_file(entry, out_dir), cfg, runner)
        if passed:
            entry.flags.add("synth_ok")
            synth_ok.append(entry)
        else:
            dropped.append(Removal(entry.id, "not synthesizable"))
    result.removed["synth"] = dropped
    result.survivors.append(("synth", len(synth_ok)))

    current, result.removed["decontaminate"] = decontaminate(synth_ok, testset, threshold,
                                                             cfg.jobs)
    result.survivors.append(("decontaminate", len(current)))

    result.removed["difficulty"] = [Removal(e.id, TOO_EASY) for e in current if TOO_EASY in e.flags]
    current = [e for e in current if TOO_EASY not in e.flags]
    result.survivors.append(("difficulty", len(current)))

    rendered, dropped = [], []
    for entry in current:
        outcome = render_diagram(_source_file(entry, out_dir), cfg, runner,
                                 os.path.join(out_dir, "diagrams", entry.id + ".svg"))
        if outcome.ok:
            entry.flags.add("render_ok")
            entry.diagram_ref = outcome.path
            rendered.append(entry)
        else:
            dropped.append(Removal(entry.id, outcome.reason))
    result.removed["render"] = dropped
    result.survivors.append(("render", len(rendered)))

    result.kept, result.removed["budget"] = token_budget_filter(rendered, max_tokens)
    result.survivors.append(("budget", len(result.kept)))
    for stage, count in result.survivors:
        logger.info("after %-13s %d entries", stage, count)
    return result
