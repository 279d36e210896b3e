"""
Evaluation protocol runner.

Every completion is judged in three steps: a refusal is a failure on both
counts; otherwise the extracted code must compile (syntax pass) and then
pass its testbench (functional pass). Judgments only ever depend on the
completion text and the variant's testbench; the mode label (original,
mirage, mismatch) only decides which cell a completion belongs to and
which refusal rate it feeds.
"""

import csv
import logging
import os
import random
import re
import shutil
import tempfile
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from anonymizer import verify_anonymized
from errors import HeaderParseError, JudgingError, LexError, ReportError
from eval_structs import (BenchmarkSample, CellResult, ComparisonRow, CompletionRecord,
                          EvalReport, JudgedRecord, flag_key, read_jsonl)
from merkle import ledger_root
from metrics import (MODES, VARIANTS, ProblemOutcome, RefusalTemplateConfig,
                     aggregate_pass_at_k, detect_refusal, outcome_breakdown,
                     refusal_rates, round_half_up)
from sim_orchestrator import (CommandRunner, ToolchainConfig, compile_candidate,
                              simulate_candidate)
from stats import discordant_counts, holm_bonferroni, mcnemar
from verilog_model import index_identifiers, parse_header

logger = logging.getLogger(__name__)

OUTCOME_SWITCHES = ("first", "any")
CONDITIONS = {"normal": "Normal", "anony": "Anony"}

_FENCE = re.compile(r"```[ \t]*([A-Za-z]*)[^\n]*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class RunConfig:
    k_list: Optional[Tuple[int, ...]] = None  # None: (1, 5) when n >= 5, else (1,)
    outcome_switch: str = "first"
    jobs: int = 1
    seed: int = 0
    model: str = "model"
    refusal: RefusalTemplateConfig = field(default_factory=RefusalTemplateConfig)

    def __post_init__(self):
        if self.outcome_switch not in OUTCOME_SWITCHES:
            raise JudgingError(f"outcome switch must be one of {OUTCOME_SWITCHES}")
        if self.jobs < 1:
            raise JudgingError("jobs must be at least 1")


def extract_verilog(text: str) -> str:
    """First fenced block, preferring one tagged verilog; the raw text otherwise."""
    blocks = _FENCE.findall(text)
    for tag, body in blocks:
        if tag.lower() in ("verilog", "systemverilog", "v"):
            return body
    if blocks:
        return blocks[0][1]
    return text


def category_distribution(manifest: Sequence[BenchmarkSample]) -> Dict[str, Dict[str, float]]:
    counts = defaultdict(int)
    for sample in manifest:
        counts[sample.category or "unlabeled"] += 1
    total = len(manifest)
    return {cat: {"count": counts[cat], "ratio": counts[cat] / total}
            for cat in sorted(counts)}


def _check_cells(completions: Sequence[CompletionRecord]) -> int:
    """Completion indices must be 0..n-1 in every cell, with one n for the run."""
    cells = defaultdict(list)
    for record in completions:
        cells[(record.sample_id, record.variant, record.mode)].append(record.completion_index)
    sizes = set()
    for cell, indices in cells.items():
        if sorted(indices) != list(range(len(indices))):
            raise JudgingError(f"completion indices of {cell} are not 0..{len(indices) - 1}")
        sizes.add(len(indices))
    if len(sizes) != 1:
        raise JudgingError(f"completion count differs between cells: {sorted(sizes)}")
    return sizes.pop()


def _k_list(config: RunConfig, n: int) -> List[int]:
    k_list = list(config.k_list) if config.k_list else ([1, 5] if n >= 5 else [1])
    if max(k_list) > n:
        raise JudgingError(f"n={n} completions cannot support pass@{max(k_list)}")
    return sorted(set(k_list))


def judge_record(record: CompletionRecord, sample: BenchmarkSample, toolchain: ToolchainConfig,
                 runner: CommandRunner, scratch: str,
                 refusal: RefusalTemplateConfig = RefusalTemplateConfig()) -> JudgedRecord:
    def verdict(refused, syntax, func, detail=""):
        return JudgedRecord(record.sample_id, record.variant, record.mode,
                            record.completion_index, refused, syntax, func, detail)

    if detect_refusal(record.text, refusal):
        return verdict(True, False, False, "refused")
    code = extract_verilog(record.text)
    name = re.sub(r"[^A-Za-z0-9_.-]", "_", "{}_{}_{}_{}.v".format(*record.key))
    # sanitized names can collide, so every record gets its own directory
    candidate = os.path.join(tempfile.mkdtemp(prefix="rec-", dir=scratch), name)
    compiled, result = compile_candidate(sample.header_for(record.variant), code,
                                         toolchain, runner, candidate)
    if not compiled:
        return verdict(False, False, False, "timeout" if result.timed_out else "compile error")
    passed, result = simulate_candidate(candidate, sample.testbench_for(record.variant),
                                        toolchain.success_rule, toolchain, runner)
    if passed:
        return verdict(False, True, True)
    return verdict(False, True, False, "timeout" if result.timed_out else "testbench failed")


def check_anonymized_headers(manifest: Sequence[BenchmarkSample]):
    """Every anonymized header must pass verify_anonymized against its original."""
    for sample in manifest:
        if not sample.anon_header:
            continue
        try:
            index = index_identifiers(sample.header, parse_header(sample.header))
            violations = verify_anonymized(sample.anon_header, index)
        except (HeaderParseError, LexError) as exc:
            raise JudgingError(f"sample {sample.id}: {exc}") from exc
        if violations:
            raise JudgingError("sample {}: anonymized header is not anonymous ({})".format(
                sample.id, ", ".join(f"{v.kind} {v.identifier}" for v in violations)))


def judge_all(manifest: Sequence[BenchmarkSample], completions: Sequence[CompletionRecord],
              toolchain: ToolchainConfig, runner: CommandRunner,
              config: RunConfig = RunConfig()) -> List[JudgedRecord]:
    by_id = {sample.id: sample for sample in manifest}
    for record in completions:
        sample = by_id.get(record.sample_id)
        if sample is None:
            raise JudgingError(f"completion refers to unknown sample {record.sample_id}")
        testbench = sample.testbench_for(record.variant)
        if not os.path.isfile(testbench):
            raise JudgingError(f"missing testbench {testbench} for sample {sample.id}")
    check_anonymized_headers(manifest)

    ordered = sorted(completions, key=lambda r: r.key)
    os.makedirs(toolchain.workdir, exist_ok=True)
    scratch = tempfile.mkdtemp(prefix="candidates-", dir=toolchain.workdir)
    try:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            judged = list(pool.map(
                lambda r: judge_record(r, by_id[r.sample_id], toolchain, runner, scratch,
                                       config.refusal),
                ordered))
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    logger.info("judged %d completions", len(judged))
    return judged


def _sample_pass(records: List[JudgedRecord], switch: str) -> bool:
    if switch == "first":
        return min(records, key=lambda r: r.completion_index).func_pass
    return any(r.func_pass for r in records)


def aggregate(judged: Sequence[JudgedRecord], manifest: Sequence[BenchmarkSample],
              config: RunConfig, n: int, metadata: Optional[Dict] = None) -> EvalReport:
    k_list = _k_list(config, n)
    cells = defaultdict(lambda: defaultdict(list))
    for record in judged:
        cells[(record.variant, record.mode)][record.sample_id].append(record)

    report = EvalReport(model=config.model, k_list=k_list, outcome_switch=config.outcome_switch)
    for variant in VARIANTS:
        for mode in MODES:
            per_sample = cells.get((variant, mode))
            if not per_sample:
                continue
            outcomes = [ProblemOutcome(sid, variant, mode, len(rs),
                                       sum(r.syntax_pass for r in rs),
                                       sum(r.func_pass for r in rs),
                                       sum(r.refused for r in rs))
                        for sid, rs in sorted(per_sample.items())]
            report.cells.append(CellResult(
                variant, mode, n, len(outcomes),
                {f"pass@{k}": aggregate_pass_at_k(outcomes, k, "syntax") for k in k_list},
                {f"pass@{k}": aggregate_pass_at_k(outcomes, k, "functional") for k in k_list},
            ))
            report.sample_flags[flag_key(variant, mode)] = {
                sid: _sample_pass(rs, config.outcome_switch)
                for sid, rs in sorted(per_sample.items())}

        original = report.sample_flags.get(flag_key(variant, "original"), {})
        mirage = report.sample_flags.get(flag_key(variant, "mirage"), {})
        paired = [(original[sid], mirage[sid]) for sid in sorted(original) if sid in mirage]
        if paired:
            report.breakdown[variant] = outcome_breakdown(paired)
        variant_records = [r for r in judged if r.variant == variant]
        if variant_records:
            report.refusal[variant] = refusal_rates((r.mode, r.refused, True)
                                                    for r in variant_records)

    report.categories = category_distribution(manifest)
    report.metadata = dict(metadata or {})
    report.metadata.update({
        "seed": config.seed,
        "n": n,
        "records": len(judged),
        "ledger_root": ledger_root(r.get_hash() for r in sorted(judged, key=lambda r: r.key)),
    })
    return report


def run_protocol(manifest: Sequence[BenchmarkSample], completions: Sequence[CompletionRecord],
                 toolchain: ToolchainConfig, runner: CommandRunner,
                 config: RunConfig = RunConfig()) -> EvalReport:
    if not completions:
        raise JudgingError("no completions to evaluate")
    n = _check_cells(completions)
    _k_list(config, n)
    judged = judge_all(manifest, completions, toolchain, runner, config)
    metadata = {"toolchain": toolchain.describe(),
                "success_rule": toolchain.success_rule.describe()}
    return aggregate(judged, manifest, config, n, metadata)


def compare_many(pairs: Sequence[Tuple[str, EvalReport, EvalReport]],
                 alpha: float = 0.05) -> List[ComparisonRow]:
    """McNemar per (pair, condition) with one Holm correction over all of them."""
    raw = []
    for label, report_a, report_b in pairs:
        if report_a.outcome_switch != report_b.outcome_switch:
            raise JudgingError(f"{label}: reports use different outcome switches")
        for variant, condition in CONDITIONS.items():
            key = flag_key(variant, "original")
            flags_a = report_a.sample_flags.get(key)
            flags_b = report_b.sample_flags.get(key)
            if flags_a is None or flags_b is None:
                continue
            if flags_a.keys() != flags_b.keys():
                raise JudgingError(f"{label} ({condition}): reports cover different sample ids")
            ids = sorted(flags_a)
            b, c = discordant_counts([flags_a[i] for i in ids], [flags_b[i] for i in ids])
            raw.append((label, condition, mcnemar(b, c)))
    if not raw:
        raise JudgingError("no condition is shared by the compared reports")
    holm = holm_bonferroni([result.p_value for _, _, result in raw], alpha)
    return [ComparisonRow(label, condition, result.b, result.c, result.variant_used,
                          result.statistic, result.p_value, adjusted, rejected)
            for (label, condition, result), adjusted, rejected
            in zip(raw, holm.adjusted, holm.rejected)]


def compare_models(report_a: EvalReport, report_b: EvalReport,
                   alpha: float = 0.05) -> List[ComparisonRow]:
    return compare_many([(f"{report_a.model} vs {report_b.model}", report_a, report_b)], alpha)


def derangement(ids: Sequence[str], rng: random.Random) -> Dict[str, str]:
    """Map each id to a different id; rejection sampling over shuffles."""
    if len(ids) < 2:
        raise JudgingError("a mismatch assignment needs at least two samples")
    donors = list(ids)
    while True:
        rng.shuffle(donors)
        if all(a != b for a, b in zip(ids, donors)):
            return dict(zip(ids, donors))


def mismatch_assignments(manifest: Sequence[BenchmarkSample], rounds: int = 5,
                         seed: int = 0) -> List[Dict[str, str]]:
    rng = random.Random(seed)
    ids = [sample.id for sample in manifest]
    return [derangement(ids, rng) for _ in range(rounds)]


@dataclass
class MismatchRound:
    round: int
    variant: str
    func_pass1: float
    mrr: float


CompletionProvider = Callable[[int, Dict[str, str]], Sequence[CompletionRecord]]


def run_mismatch_rounds(manifest: Sequence[BenchmarkSample], completion_provider: CompletionProvider,
                        toolchain: ToolchainConfig, runner: CommandRunner,
                        config: RunConfig = RunConfig(), rounds: int = 5,
                        seed: int = 0) -> List[MismatchRound]:
    """
    Each round pairs every sample with another sample's diagram. The
    provider returns the mismatch-mode completions obtained under that
    round's assignment (round numbers start at 1).
    """
    if len(manifest) < 2:
        raise JudgingError("mismatch rounds need at least two samples")
    rows = []
    for number, assignment in enumerate(mismatch_assignments(manifest, rounds, seed), 1):
        completions = [r for r in completion_provider(number, assignment) if r.mode == "mismatch"]
        if not completions:
            raise JudgingError(f"round {number}: no mismatch completions")
        _check_cells(completions)
        judged = judge_all(manifest, completions, toolchain, runner, config)
        for variant in VARIANTS:
            records = [r for r in judged if r.variant == variant]
            if not records:
                continue
            per_sample = defaultdict(list)
            for r in records:
                per_sample[r.sample_id].append(r)
            outcomes = [ProblemOutcome(sid, variant, "mismatch", len(rs),
                                       sum(r.syntax_pass for r in rs),
                                       sum(r.func_pass for r in rs),
                                       sum(r.refused for r in rs))
                        for sid, rs in sorted(per_sample.items())]
            mrr = refusal_rates((r.mode, r.refused, True) for r in records).mrr
            rows.append(MismatchRound(number, variant,
                                      aggregate_pass_at_k(outcomes, 1, "functional"), mrr))
        logger.info("mismatch round %d judged %d completions", number, len(judged))
    return rows


def mismatch_averages(rows: Sequence[MismatchRound]) -> Dict[str, Tuple[float, float]]:
    by_variant = defaultdict(list)
    for row in rows:
        by_variant[row.variant].append(row)
    return {variant: (sum(r.func_pass1 for r in rs) / len(rs), sum(r.mrr for r in rs) / len(rs))
            for variant, rs in by_variant.items()}


def jsonl_round_provider(path: str) -> CompletionProvider:
    """Completions from one file whose rows carry a 1-based `round` field."""
    rows = read_jsonl(path)

    def provide(number: int, assignment: Dict[str, str]) -> List[CompletionRecord]:
        return [CompletionRecord.from_dict(row) for row in rows if int(row.get("round", 0)) == number]
    return provide


def fmt_percent(value: Optional[float]) -> str:
    return "--" if value is None else f"{round_half_up(value):.2f}"


METRIC_COLUMNS = [(mode, kind, k) for mode in ("original", "mirage")
                  for kind in ("syntax", "functional") for k in (1, 5)]


def main_table_rows(report: EvalReport) -> List[List[str]]:
    rows = []
    for variant in VARIANTS:
        if not any(cell.variant == variant for cell in report.cells):
            continue
        row = [report.model, CONDITIONS[variant]]
        for mode, kind, k in METRIC_COLUMNS:
            cell = report.cell(variant, mode)
            values = {} if cell is None else getattr(cell, kind)
            row.append(fmt_percent(values.get(f"pass@{k}")))
        rows.append(row)
    return rows


MAIN_HEADER = ["Model", "Variant"] + [
    f"{'Orig.' if mode == 'original' else 'Mirage'} {'Syntax' if kind == 'syntax' else 'Func.'}@{k}"
    for mode, kind, k in METRIC_COLUMNS]


def md_table(header: List[str], rows: List[List[str]]) -> List[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(v) for v in row) + " |" for row in rows]
    return lines


def breakdown_rows(report: EvalReport) -> List[List[str]]:
    return [[report.model, CONDITIONS[variant]] + [f"{v:.2f}" for v in row.as_percentages()]
            for variant, row in report.breakdown.items()]


def refusal_rows(report: EvalReport) -> List[List[str]]:
    return [[report.model, CONDITIONS[variant], fmt_percent(rates.frr), fmt_percent(rates.rr), fmt_percent(rates.mrr)]
            for variant, rates in report.refusal.items()]


def render_markdown(report: EvalReport) -> str:
    lines = [f"# Evaluation report: {report.model}", "",
             "## Pass@k (%)", ""]
    lines += md_table(MAIN_HEADER, main_table_rows(report))
    if report.breakdown:
        lines += ["", "## Functional Pass@1 breakdown (%)", ""]
        lines += md_table(["Model", "Variant", "Both", "Original only", "Mirage only", "Neither"],
                           breakdown_rows(report))
    if report.refusal:
        lines += ["", "## Refusal rates (%)", ""]
        lines += md_table(["Model", "Variant", "FRR", "RR", "MRR"], refusal_rows(report))
    if report.categories:
        lines += ["", "## Categories", ""]
        lines += md_table(["Category", "Count", "Ratio (%)"],
                           [[cat, int(v["count"]), fmt_percent(100 * v["ratio"])]
                            for cat, v in report.categories.items()])
    if report.comparisons:
        lines += ["", "## McNemar", ""]
        lines += md_table(["Comparison", "Condition", "b", "c", "Test", "p", "Holm p", "Reject"],
                           comparison_rows(report.comparisons))
    lines += ["", f"Ledger root: `{report.metadata.get('ledger_root', '')}`", ""]
    return "\n".join(lines)


def _fmt_p(p: float) -> str:
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def comparison_rows(rows: Sequence[ComparisonRow]) -> List[List[str]]:
    return [[r.label, r.condition, r.b, r.c, r.variant_used, _fmt_p(r.p_value),
             _fmt_p(r.adjusted_p), "yes" if r.rejected else "n.s."] for r in rows]


def _write(path: str, text: str):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fp:
            fp.write(text)
    except OSError as err:
        raise ReportError(f"cannot write {path}: {err}") from err


def _write_csv(path: str, header: List[str], rows: List[List]):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as err:
        raise ReportError(f"cannot write {path}: {err}") from err


def emit_report(report: EvalReport, out_prefix: str,
                formats: Sequence[str] = ("json", "markdown", "csv")) -> List[str]:
    """Write <prefix>.json, <prefix>.md and <prefix>.<table>.csv files."""
    unknown = set(formats) - {"json", "markdown", "csv"}
    if unknown:
        raise ReportError(f"unknown report formats {sorted(unknown)}")
    written = []
    if "json" in formats:
        _write(out_prefix + ".json", report.to_json() + "\n")
        written.append(out_prefix + ".json")
    if "markdown" in formats:
        _write(out_prefix + ".md", render_markdown(report))
        written.append(out_prefix + ".md")
    if "csv" in formats:
        tables = [("main", MAIN_HEADER, main_table_rows(report))]
        if report.breakdown:
            tables.append(("breakdown", ["Model", "Variant", "Both", "Original only",
                                         "Mirage only", "Neither"], breakdown_rows(report)))
        if report.refusal:
            tables.append(("refusal", ["Model", "Variant", "FRR", "RR", "MRR"],
                           refusal_rows(report)))
        for name, header, rows in tables:
            path = f"{out_prefix}.{name}.csv"
            _write_csv(path, header, rows)
            written.append(path)
    logger.info("wrote %s", ", ".join(written))
    return written
