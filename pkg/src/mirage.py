"""
Command line entry point:

    python3 src/mirage.py <command> [options]

Exit codes: 0 success, 2 judging/runtime errors, 3 configuration errors.
"""

import argparse
import csv
import json
import logging
import os
import sys

import anonymizer
import corpus_pipeline
import dorpo_core
import harness
import pref_builder
import stats
from errors import CorpusError, MirageError, ToolchainConfigError
from eval_structs import (EvalReport, load_align_manifest, load_completions, load_manifest,
                          read_jsonl, write_jsonl)
from metrics import RefusalTemplateConfig
from sim_orchestrator import SubprocessRunner, load_toolchain

logger = logging.getLogger("mirage")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _load_corpus(path):
    return [corpus_pipeline.CorpusEntry.from_dict(row) for row in read_jsonl(path)]


def _write_removals(path, removals):
    if path:
        write_jsonl(path, removals)


def cmd_anonymize(args):
    rename = anonymizer.anonymize_file(args.input, args.out, args.map, args.strip_comments)
    print(f"{args.out}: {rename.placeholder_count} placeholders")


def cmd_build_pairs(args):
    samples = load_align_manifest(args.manifest)
    pairs = pref_builder.build_pairs(samples, args.seed, args.blank_ref)
    write_jsonl(args.out, pref_builder.pair_rows(pairs))
    if args.blank_image:
        pref_builder.write_blank_image(args.blank_image)
    counts = pref_builder.category_counts(pairs)
    print(" ".join(f"{name}={count}" for name, count in counts.items()))


def cmd_decontaminate(args):
    kept, removed = corpus_pipeline.decontaminate(_load_corpus(args.corpus),
                                                  _load_corpus(args.testset),
                                                  args.threshold, args.jobs)
    write_jsonl(args.out, [e.to_dict() for e in kept])
    _write_removals(args.removed, removed)
    print(f"kept {len(kept)}, removed {len(removed)}")


def cmd_filter_tokens(args):
    kept, removed = corpus_pipeline.token_budget_filter(_load_corpus(args.corpus), args.max)
    write_jsonl(args.out, [e.to_dict() for e in kept])
    _write_removals(args.removed, removed)
    print(f"kept {len(kept)}, removed {len(removed)}")


def cmd_corpus_stats(args):
    entries = _load_corpus(args.corpus)
    series = [("token_count", [e.token_count_visual for e in entries]),
              ("header_token_count", [e.header_token_count for e in entries])]
    rows = []
    for name, counts in series:
        if all(c is None for c in counts):
            continue
        result = corpus_pipeline.corpus_stats(counts, args.bins)
        print(f"{name}: n={result.count} mean={result.mean:.1f} median={result.median:.1f} "
              f"deciles={[round(d, 1) for d in result.deciles]}")
        rows += [[name, "histogram", lo, hi, count] for lo, hi, count in result.histogram]
        rows += [[name, "cdf", value, "", frac] for value, frac in result.cdf]
    if not rows:
        raise CorpusError("no counted entries")
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fp:
            writer = csv.writer(fp)
            writer.writerow(["series", "kind", "x", "x_high", "y"])
            writer.writerows(rows)


def cmd_curate(args):
    cfg = load_toolchain(args.toolchain)
    testset = _load_corpus(args.testset) if args.testset else []
    result = corpus_pipeline.run_curation(_load_corpus(args.corpus), testset, cfg,
                                          SubprocessRunner(), args.out_dir,
                                          args.threshold, args.max_tokens)
    write_jsonl(os.path.join(args.out_dir, "curated.jsonl"), [e.to_dict() for e in result.kept])
    for stage, count in result.survivors:
        print(f"{stage:<14}{count}")


def _run_config(args):
    return harness.RunConfig(k_list=tuple(args.k) if args.k else None,
                             outcome_switch=args.outcome, jobs=args.jobs, seed=args.seed,
                             model=args.model, refusal=RefusalTemplateConfig(args.refusal))


def cmd_evaluate(args):
    cfg = load_toolchain(args.toolchain, **({"jobs": args.jobs} if args.jobs else {}))
    report = harness.run_protocol(load_manifest(args.manifest), load_completions(args.completions),
                                  cfg, SubprocessRunner(), _run_config(args))
    prefix = args.out[:-5] if args.out.endswith(".json") else args.out
    formats = ["json"] + (["csv"] if args.csv else [])
    harness.emit_report(report, prefix, formats)
    if args.markdown:
        with open(args.markdown, "w", encoding="utf-8") as fp:
            fp.write(harness.render_markdown(report))
    print(harness.render_markdown(report))


def _read_report(path):
    with open(path, encoding="utf-8") as fp:
        return EvalReport.from_json(fp.read())


def cmd_compare(args):
    pairs = []
    if args.a and args.b:
        a, b = _read_report(args.a), _read_report(args.b)
        pairs.append((f"{a.model} vs {b.model}", a, b))
    for path_a, path_b in args.pair or ():
        a, b = _read_report(path_a), _read_report(path_b)
        pairs.append((f"{a.model} vs {b.model}", a, b))
    if not pairs:
        raise ToolchainConfigError("compare needs --a/--b or at least one --pair")
    rows = harness.compare_many(pairs, args.alpha)
    header = ["Comparison", "Condition", "b", "c", "Test", "p", "Holm p", "Reject"]
    print("\n".join(harness.md_table(header, harness.comparison_rows(rows))))
    if args.out:
        write_jsonl(args.out, rows)


def cmd_mismatch_rounds(args):
    manifest = load_manifest(args.manifest)
    if args.assign_only:
        assignments = harness.mismatch_assignments(manifest, args.rounds, args.seed)
        write_jsonl(args.assign_only, [{"round": i, "assignment": a}
                                       for i, a in enumerate(assignments, 1)])
        print(f"wrote {len(assignments)} assignments to {args.assign_only}")
        return
    if not args.completions:
        raise ToolchainConfigError("mismatch-rounds needs --completions or --assign-only")
    cfg = load_toolchain(args.toolchain)
    rows = harness.run_mismatch_rounds(manifest, harness.jsonl_round_provider(args.completions),
                                       cfg, SubprocessRunner(), _run_config(args),
                                       args.rounds, args.seed)
    table = [[r.round, harness.CONDITIONS[r.variant], harness.fmt_percent(r.func_pass1),
              harness.fmt_percent(r.mrr)] for r in rows]
    for variant, (func, mrr) in harness.mismatch_averages(rows).items():
        table.append(["Avg.", harness.CONDITIONS[variant], harness.fmt_percent(func), harness.fmt_percent(mrr)])
    print("\n".join(harness.md_table(["Round", "Variant", "Func.", "MRR"], table)))


def _count_rows(path):
    with open(path, newline="", encoding="utf-8") as fp:
        rows = [row for row in csv.reader(fp) if row and not row[0].startswith("#")]
    if rows and len(rows[0]) > 1 and not rows[0][1].strip().lstrip("+-").isdigit():
        rows = rows[1:]  # header
    parsed = []
    for lineno, row in enumerate(rows, 1):
        if len(row) < 3:
            raise ToolchainConfigError(f"{path}: row {lineno} needs label,b,c")
        label, b, c = row[0], row[1].strip(), row[2].strip()
        if not (b.isdigit() and c.isdigit()):
            raise ToolchainConfigError(
                f"{path}: row {lineno} counts must be non-negative integers, got {b!r}, {c!r}")
        parsed.append((label, int(b), int(c)))
    return parsed


def cmd_stats_mcnemar(args):
    results = [(label, stats.mcnemar(b, c)) for label, b, c in _count_rows(args.pairs)]
    holm = stats.holm_bonferroni([r.p_value for _, r in results], args.alpha)
    writer = csv.writer(sys.stdout)
    writer.writerow(["label", "variant", "statistic", "p", "adjusted_p", "reject"])
    for (label, r), adjusted, reject in zip(results, holm.adjusted, holm.rejected):
        writer.writerow([label, r.variant_used, f"{r.statistic:.4f}", f"{r.p_value:.6g}",
                         f"{adjusted:.6g}", reject])


def _toy_pairs(args):
    if args.pairs:
        return [(row["chosen"], row["rejected"]) for row in read_jsonl(args.pairs)]
    return dorpo_core.make_toy_pairs(seed=args.seed)


def cmd_dorpo_check(args):
    results = dorpo_core.check_properties(args.seed)
    for name, ok in results:
        print(f"{'ok  ' if ok else 'FAIL'} {name}")
    print(f"\n{'K':>4} {'alpha':>6} {'phi_c':>8} {'phi_r':>8} {'gamma':>8}")
    for row in dorpo_core.phi_gamma_table():
        print(f"{row['K']:>4} {row['alpha']:>6g} {row['phi_chosen']:>8.4f} "
              f"{row['phi_rejected']:>8.4f} {row['gamma']:>8.4f}")
    return EXIT_OK if all(ok for _, ok in results) else EXIT_RUNTIME


def cmd_dorpo_toy(args):
    pairs = _toy_pairs(args)
    positions = max(max(len(c), len(r)) for c, r in pairs)
    vocab = 1 + max(max(c + r) for c, r in pairs)
    cfg = dorpo_core.DecisionConfig(args.K, args.alpha, args.beta, not args.sum)
    _, trace = dorpo_core.toy_align_loop(pairs, dorpo_core.ToyScorer.uniform(positions, vocab),
                                         cfg, args.steps, args.lr)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=list(dorpo_core.StepRecord.__dataclass_fields__))
        writer.writeheader()
        writer.writerows(record.as_row() for record in trace)
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_dorpo_sweep(args):
    points = dorpo_core.sweep_toy(_toy_pairs(args), steps=args.steps, lr=args.lr, beta=args.beta)
    writer = csv.writer(sys.stdout)
    writer.writerow(["K", "alpha", "final_loss", "final_gap", "window_logp"])
    for p in points:
        writer.writerow([p.K, p.alpha, f"{p.final_loss:.6f}", f"{p.final_gap:.6f}",
                         f"{p.window_logp:.6f}"])


def _add_run_options(parser):
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--toolchain", help="toolchain .toml/.yaml (defaults: yosys, iverilog)")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--model", default="model")
    parser.add_argument("--k", type=int, action="append", help="pass@k to report (repeatable)")
    parser.add_argument("--outcome", choices=harness.OUTCOME_SWITCHES, default="first")
    parser.add_argument("--refusal", default=RefusalTemplateConfig().key_phrase)


def build_parser():
    parser = _Parser(prog="mirage", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("anonymize", help="rename a module's identifiers to placeholders")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--map")
    p.add_argument("--strip-comments", action="store_true")
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("build-pairs", help="match/blank/mismatch preference pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--blank-ref", default=pref_builder.BLANK_IMAGE_REF)
    p.add_argument("--blank-image", help="also write the blank image here")
    p.set_defaults(func=cmd_build_pairs)

    p = sub.add_parser("decontaminate", help="drop corpus entries too similar to the test set")
    p.add_argument("--corpus", required=True)
    p.add_argument("--testset", required=True)
    p.add_argument("--threshold", type=float, default=corpus_pipeline.DECONTAMINATION_THRESHOLD)
    p.add_argument("--out", required=True)
    p.add_argument("--removed")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_decontaminate)

    p = sub.add_parser("filter-tokens", help="visual token budget filter")
    p.add_argument("--corpus", required=True)
    p.add_argument("--max", type=int, default=corpus_pipeline.MAX_VISUAL_TOKENS)
    p.add_argument("--out", required=True)
    p.add_argument("--removed")
    p.set_defaults(func=cmd_filter_tokens)

    p = sub.add_parser("corpus-stats", help="token count distribution")
    p.add_argument("--corpus", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_corpus_stats)

    p = sub.add_parser("curate", help="synth, decontaminate, difficulty, render, budget")
    p.add_argument("--corpus", required=True)
    p.add_argument("--testset")
    p.add_argument("--toolchain")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threshold", type=float, default=corpus_pipeline.DECONTAMINATION_THRESHOLD)
    p.add_argument("--max-tokens", type=int, default=corpus_pipeline.MAX_VISUAL_TOKENS)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("evaluate", help="judge completions and report pass@k")
    _add_run_options(p)
    p.add_argument("--completions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--markdown")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="McNemar between reports with Holm correction")
    p.add_argument("--a")
    p.add_argument("--b")
    p.add_argument("--pair", nargs=2, action="append", metavar=("A", "B"))
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("mismatch-rounds", help="judge completions under unrelated diagrams")
    _add_run_options(p)
    p.add_argument("--completions")
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--assign-only", metavar="OUT")
    p.set_defaults(func=cmd_mismatch_rounds)

    p = sub.add_parser("stats", help="statistical tests")
    stats_sub = p.add_subparsers(dest="test", required=True)
    q = stats_sub.add_parser("mcnemar")
    q.add_argument("--pairs", required=True, help="CSV rows of label,b,c")
    q.add_argument("--alpha", type=float, default=0.05)
    q.set_defaults(func=cmd_stats_mcnemar)

    p = sub.add_parser("dorpo", help="decision-weighted preference objective")
    dorpo_sub = p.add_subparsers(dest="action", required=True)
    q = dorpo_sub.add_parser("check")
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_dorpo_check)
    for name, func in (("toy", cmd_dorpo_toy), ("sweep", cmd_dorpo_sweep)):
        q = dorpo_sub.add_parser(name)
        q.add_argument("--pairs", help="JSON lines of {chosen: [...], rejected: [...]}")
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--steps", type=int, default=200 if name == "toy" else 100)
        q.add_argument("--lr", type=float, default=0.1 if name == "toy" else 0.5)
        q.add_argument("--beta", type=float, default=0.1)
        if name == "toy":
            q.add_argument("--alpha", type=float, default=2.0)
            q.add_argument("--K", type=int, default=8)
            q.add_argument("--sum", action="store_true", help="weighted sum instead of average")
            q.add_argument("--out")
        q.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="|%(name)s| %(message)s", stream=sys.stderr)
    try:
        code = args.func(args)
    except ToolchainConfigError as err:
        logger.error("%s", err)
        return EXIT_CONFIG
    except (MirageError, OSError, json.JSONDecodeError) as err:
        logger.error("%s", err)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
