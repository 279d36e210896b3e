import os
import sys
PROJECT_ROOT = os.path.abspath(os.path.join(
                  os.path.dirname(__file__),
                  os.pardir)
)
sys.path.insert(0, os.path.join(PROJECT_ROOT, "src"))

import math
import unittest

from hypothesis import given, settings
from hypothesis import strategies as st

from errors import MetricError
from stats import (CHI2_CORRECTED, EXACT_LIMIT, EXACT_MID_P, discordant_counts, exact_p,
                   holm_bonferroni, mcnemar, mid_p)


def enumerated_mid_p(b, c):
    n = b + c
    if n == 0:
        return 1.0
    k = min(b, c)
    pmf = [math.comb(n, i) / 2 ** n for i in range(n + 1)]
    return min(1.0, 2 * (sum(pmf[:k]) + 0.5 * pmf[k]))


def enumerated_exact(b, c):
    n = b + c
    if n == 0:
        return 1.0
    return min(1.0, 2 * sum(math.comb(n, i) for i in range(min(b, c) + 1)) / 2 ** n)


class TestMcNemar(unittest.TestCase):

    def test_clamped_chi2(self):
        result = mcnemar(22, 21)
        self.assertEqual(result.variant_used, CHI2_CORRECTED)
        self.assertEqual(result.statistic, 0.0)
        self.assertEqual(result.p_value, 1.0)

    def test_no_discordance(self):
        result = mcnemar(0, 0)
        self.assertEqual(result.variant_used, EXACT_MID_P)
        self.assertEqual(result.p_value, 1.0)

    def test_strong_effect(self):
        result = mcnemar(56, 4)
        self.assertEqual(result.variant_used, CHI2_CORRECTED)
        self.assertAlmostEqual(result.statistic, 51 ** 2 / 60, places=10)
        self.assertLess(result.p_value, 0.001)
        # chi-square(1) tail equals erfc(sqrt(x / 2))
        self.assertAlmostEqual(result.p_value, math.erfc(math.sqrt(43.35 / 2)), delta=1e-15)

    def test_small_exact(self):
        result = mcnemar(3, 0)
        self.assertEqual(result.variant_used, EXACT_MID_P)
        self.assertEqual(result.statistic, 0.0)
        self.assertAlmostEqual(result.p_value, 0.125, places=12)

    def test_branch_boundary(self):
        self.assertEqual(mcnemar(13, 12).variant_used, EXACT_MID_P)
        self.assertEqual(mcnemar(13, 13).variant_used, CHI2_CORRECTED)

    def test_negative_counts(self):
        with self.assertRaises(MetricError):
            mcnemar(-1, 3)

    def test_exact_branch_against_enumeration(self):
        for n in range(EXACT_LIMIT + 1):
            for b in range(n + 1):
                c = n - b
                self.assertAlmostEqual(mid_p(b, c), enumerated_mid_p(b, c), places=12,
                                       msg=(b, c))
                self.assertAlmostEqual(exact_p(b, c), enumerated_exact(b, c), places=12,
                                       msg=(b, c))
                self.assertLessEqual(mid_p(b, c), exact_p(b, c) + 1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 400), st.integers(0, 400))
    def test_symmetric_and_bounded(self, b, c):
        forward = mcnemar(b, c)
        backward = mcnemar(c, b)
        self.assertEqual(forward.p_value, backward.p_value)
        self.assertGreaterEqual(forward.p_value, 0.0)
        self.assertLessEqual(forward.p_value, 1.0)


class TestHolm(unittest.TestCase):

    def test_single(self):
        result = holm_bonferroni([0.5])
        self.assertEqual(result.adjusted, [0.5])
        self.assertEqual(result.rejected, [False])

    def test_step_down(self):
        result = holm_bonferroni([0.01, 0.04, 0.03])
        for got, want in zip(result.adjusted, [0.03, 0.06, 0.06]):
            self.assertAlmostEqual(got, want, places=12)
        self.assertEqual(result.rejected, [True, False, False])

    def test_normal_vs_anony_pattern(self):
        normal = [mcnemar(22, 21).p_value, mcnemar(10, 9).p_value,
                  mcnemar(30, 28).p_value, mcnemar(5, 5).p_value]
        anony = [mcnemar(56, 4).p_value, mcnemar(48, 3).p_value,
                 mcnemar(40, 2).p_value, mcnemar(35, 1).p_value]
        self.assertTrue(all(p > 0.5 for p in normal))
        self.assertTrue(all(p < 1e-4 for p in anony))
        result = holm_bonferroni(normal + anony)
        self.assertEqual(result.rejected, [False] * 4 + [True] * 4)

    def test_invalid(self):
        for ps in ([], [1.2], [-0.1], [float("nan")]):
            with self.assertRaises(MetricError, msg=ps):
                holm_bonferroni(ps)
        with self.assertRaises(MetricError):
            holm_bonferroni([0.1], alpha=1.5)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12))
    def test_adjusted_dominates_raw(self, ps):
        result = holm_bonferroni(ps)
        for raw, adjusted in zip(result.raw, result.adjusted):
            self.assertGreaterEqual(adjusted, raw - 1e-15)
            self.assertLessEqual(adjusted, 1.0)
        for raw, adjusted in zip(result.raw, result.adjusted):
            self.assertLessEqual(adjusted, min(1.0, raw * len(ps)) + 1e-12)


class TestDiscordantCounts(unittest.TestCase):

    def test_counts(self):
        a = [True, True, True, False, False]
        b = [False, False, True, True, False]
        self.assertEqual(discordant_counts(a, b), (2, 1))

    def test_length_mismatch(self):
        with self.assertRaises(MetricError):
            discordant_counts([True], [True, False])


if __name__ == "__main__":
    unittest.main()
