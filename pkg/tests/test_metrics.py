import os
import sys
PROJECT_ROOT = os.path.abspath(os.path.join(
                  os.path.dirname(__file__),
                  os.pardir)
)
sys.path.insert(0, os.path.join(PROJECT_ROOT, "src"))

import itertools
import unittest

from hypothesis import given, settings
from hypothesis import strategies as st

from errors import MetricError
from metrics import (ProblemOutcome, RefusalTemplateConfig, aggregate_pass_at_k,
                     detect_refusal, outcome_breakdown, pass_at_k, refusal_rates,
                     round_half_up)
from pref_builder import render_refusal
from verilog_model import parse_header

REFUSAL = ("I cannot accurately determine the Verilog implementation from this "
           "diagram. module add(input a, output y);")


def subset_oracle(n, c, k):
    """Fraction of k-subsets of n completions that contain a pass."""
    outcomes = [True] * c + [False] * (n - c)
    subsets = list(itertools.combinations(range(n), k))
    hits = sum(1 for subset in subsets if any(outcomes[i] for i in subset))
    return hits / len(subsets)


class TestPassAtK(unittest.TestCase):

    def test_anchors(self):
        self.assertEqual(pass_at_k(5, 5, 1), 1.0)
        self.assertEqual(pass_at_k(5, 0, 3), 0.0)
        self.assertAlmostEqual(pass_at_k(10, 3, 5), 231 / 252, places=12)

    def test_matches_subset_enumeration(self):
        for n in range(1, 13):
            for c in range(n + 1):
                for k in range(1, n + 1):
                    self.assertAlmostEqual(pass_at_k(n, c, k), subset_oracle(n, c, k),
                                           delta=1e-12, msg=(n, c, k))

    def test_argument_errors(self):
        for args in ((5, 3, 6), (5, 6, 1), (5, 2, 0), (-1, 0, 1)):
            with self.assertRaises(MetricError, msg=args):
                pass_at_k(*args)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 200).flatmap(lambda n: st.tuples(
        st.just(n), st.integers(0, n), st.integers(1, n))))
    def test_bounded_and_monotone(self, args):
        n, c, k = args
        value = pass_at_k(n, c, k)
        self.assertGreaterEqual(value, 0.0)
        self.assertLessEqual(value, 1.0)
        if c < n:
            self.assertLessEqual(value, pass_at_k(n, c + 1, k) + 1e-12)
        if k < n:
            self.assertLessEqual(value, pass_at_k(n, c, k + 1) + 1e-12)


class TestAggregate(unittest.TestCase):

    def outcome(self, n, c, sid="s"):
        return ProblemOutcome(sid, "normal", "original", n, c, c)

    def test_half(self):
        outcomes = [self.outcome(1, 1, "a"), self.outcome(1, 0, "b")]
        self.assertEqual(round_half_up(aggregate_pass_at_k(outcomes, 1)), 50.0)

    def test_all_pass(self):
        outcomes = [self.outcome(5, 5, str(i)) for i in range(4)]
        self.assertEqual(aggregate_pass_at_k(outcomes, 5), 100.0)

    def test_mixed_k5(self):
        outcomes = [self.outcome(5, 2, "a"), self.outcome(5, 0, "b"), self.outcome(5, 5, "c")]
        self.assertEqual(round_half_up(aggregate_pass_at_k(outcomes, 5)), 66.67)

    def test_syntax_kind(self):
        outcomes = [ProblemOutcome("a", "anony", "mirage", 4, 3, 1)]
        self.assertEqual(aggregate_pass_at_k(outcomes, 1, "syntax"), 75.0)
        self.assertEqual(aggregate_pass_at_k(outcomes, 1, "functional"), 25.0)

    def test_empty(self):
        with self.assertRaises(MetricError):
            aggregate_pass_at_k([], 1)

    def test_outcome_validation(self):
        with self.assertRaises(MetricError):
            ProblemOutcome("a", "normal", "original", 5, 2, 3)
        with self.assertRaises(MetricError):
            ProblemOutcome("a", "normal", "original", 5, 2, 1, refusals=4)
        with self.assertRaises(MetricError):
            ProblemOutcome("a", "visual", "original", 5, 2, 1)

    def test_round_half_up(self):
        self.assertEqual(round_half_up(0.125), 0.13)
        self.assertEqual(round_half_up(2.675), 2.68)
        self.assertEqual(round_half_up(100 / 3), 33.33)


class TestDetectRefusal(unittest.TestCase):

    def test_template(self):
        self.assertTrue(detect_refusal(render_refusal(parse_header("module m(input a);"))))
        self.assertTrue(detect_refusal(REFUSAL))

    def test_code_is_not_refusal(self):
        self.assertFalse(detect_refusal("```verilog\nmodule m(input a);\nendmodule\n```"))

    def test_normalization(self):
        self.assertTrue(detect_refusal("I CANNOT   accurately determine the Verilog\n"
                                       "implementation."))

    def test_perturbations(self):
        positives = [
            REFUSAL.upper(), REFUSAL.lower(), "  " + REFUSAL, REFUSAL + "\n\n",
            REFUSAL.replace(" ", "\t"), REFUSAL.replace(" ", "\n"), REFUSAL.replace(" ", "   "),
            "Sorry. " + REFUSAL, "```\n" + REFUSAL + "\n```", REFUSAL.replace("diagram", "image"),
            "i cannot accurately determine the verilog implementation",
            "Honestly, I cannot accurately determine the Verilog implementation here.",
            "I cannot accurately\r\ndetermine the Verilog implementation",
            "> I cannot accurately determine the Verilog implementation",
            "Answer: I Cannot Accurately Determine The Verilog Implementation.",
            REFUSAL + " " + REFUSAL,
            "module m; // I cannot accurately determine the Verilog implementation",
            "\tI cannot accurately determine the verilog implementation\t",
            "I cannot accurately determine the VERILOG implementation of it",
            "(I cannot accurately determine the Verilog implementation)",
        ]
        negatives = [
            "", "module m;\nendmodule", "I cannot determine the Verilog implementation",
            "I can accurately determine the Verilog implementation",
            "I cannot accurately determine the VHDL implementation",
            "I cannot accurately determine the Verilog", "cannot accurately determine",
            "I cannot accurately-determine the Verilog implementation",
            "Icannot accurately determine the Verilog implementation",
            "I will not produce Verilog.", "Refused.", "The diagram is blank.",
            "assign y = a & b;", "I cannot\naccurately determine the Verilog impl",
            "I cannot accurately determine the Verilog design",
            "determine the Verilog implementation I cannot accurately",
            "I_cannot_accurately_determine_the_Verilog_implementation",
            "I cannot accurately determine the System Verilog implementation",
            "I cannot reliably determine the Verilog implementation",
            "no answer",
        ]
        self.assertEqual(len(positives), 20)
        self.assertEqual(len(negatives), 20)
        for text in positives:
            self.assertTrue(detect_refusal(text), msg=text)
        for text in negatives:
            self.assertFalse(detect_refusal(text), msg=text)

    def test_custom_phrase(self):
        cfg = RefusalTemplateConfig("No diagram")
        self.assertTrue(detect_refusal("no   DIAGRAM found", cfg))
        with self.assertRaises(MetricError):
            RefusalTemplateConfig("   ")


class TestOutcomeBreakdown(unittest.TestCase):

    def test_quarters(self):
        row = outcome_breakdown([(True, True), (True, False), (False, True), (False, False)])
        self.assertEqual((row.both, row.original_only, row.mirage_only, row.neither),
                         (0.25, 0.25, 0.25, 0.25))

    def test_all_neither(self):
        row = outcome_breakdown([(False, False)] * 7)
        self.assertEqual(row.neither, 1.0)
        self.assertEqual(row.both, 0.0)

    def test_reconstructed_row(self):
        paired = ([(True, True)] * 59 + [(True, False)] * 17 + [(False, True)] * 21
                  + [(False, False)] * 70)
        self.assertEqual(len(paired), 167)
        row = outcome_breakdown(paired)
        for got, want in zip(row.as_percentages(), (35.3, 10.2, 12.6, 41.9)):
            self.assertAlmostEqual(got, want, delta=0.1)
        self.assertAlmostEqual(sum(row.as_percentages()), 100.0, delta=0.02)

    def test_empty(self):
        with self.assertRaises(MetricError):
            outcome_breakdown([])


class TestRefusalRates(unittest.TestCase):

    def test_frr(self):
        records = [("original", i == 0, True) for i in range(10)]
        self.assertEqual(refusal_rates(records).frr, 10.0)

    def test_rr(self):
        rates = refusal_rates([("mirage", True, True)] * 10)
        self.assertEqual(rates.rr, 100.0)
        self.assertIsNone(rates.frr)
        self.assertIsNone(rates.mrr)

    def test_mixed_ledger(self):
        records = [
            ("original", False, True),
            ("original", True, True),
            ("original", True, False),  # invalid input, not counted
            ("mirage", True, True),
            ("mirage", False, True),
            ("mismatch", True, True),
        ]
        rates = refusal_rates(records)
        self.assertEqual((rates.frr, rates.rr, rates.mrr), (50.0, 50.0, 100.0))

    def test_unknown_mode(self):
        with self.assertRaises(MetricError):
            refusal_rates([("blank", True, True)])


if __name__ == "__main__":
    unittest.main()
