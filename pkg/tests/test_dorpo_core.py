import os
import sys
PROJECT_ROOT = os.path.abspath(os.path.join(
                  os.path.dirname(__file__),
                  os.pardir)
)
sys.path.insert(0, os.path.join(PROJECT_ROOT, "src"))

import math
import unittest
from unittest import mock

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

import dorpo_core
from dorpo_core import (PROPERTY_ALPHA, DecisionConfig, LossBreakdown, ScoredResponse,
                        ToyScorer, check_properties, decision_gradient_fraction, dorpo_loss,
                        imbalance_ratio, log_odds, make_toy_pairs, numeric_grad, or_loss,
                        orpo_loss, phi_gamma_table, sequence_logprob, steps_to_threshold,
                        sweep_toy, token_weights, toy_align_loop, weighted_avg_logprob)
from errors import DivergenceError, DomainError


def scalar_or(logp_w, logp_l):
    odds_w = logp_w - math.log(1 - math.exp(logp_w))
    odds_l = logp_l - math.log(1 - math.exp(logp_l))
    return math.log(1 + math.exp(-(odds_w - odds_l)))


logp_lists = st.lists(st.floats(-6.0, -0.05), min_size=1, max_size=10)


class TestWeights(unittest.TestCase):

    def test_piecewise(self):
        np.testing.assert_array_equal(token_weights(5, 2, 2, 3), [1, 3, 3, 1, 1])

    def test_window_truncates(self):
        np.testing.assert_array_equal(token_weights(4, 1, 8, 2), [2, 2, 2, 2])

    def test_alpha_one(self):
        for T, r, K in ((1, 1, 1), (7, 3, 2), (20, 1, 8)):
            np.testing.assert_array_equal(token_weights(T, r, K, 1.0), np.ones(T))

    def test_invalid(self):
        for args in ((0, 1, 1, 1.0), (3, 4, 1, 1.0), (3, 1, 0, 1.0), (3, 1, 1, 0.5)):
            with self.assertRaises(DomainError, msg=args):
                token_weights(*args)

    def test_config_validation(self):
        with self.assertRaises(DomainError):
            DecisionConfig(K=0)
        with self.assertRaises(DomainError):
            DecisionConfig(alpha=0.9)
        with self.assertRaises(DomainError):
            DecisionConfig(beta=0.0)


class TestWeightedAverage(unittest.TestCase):

    def test_hand_evaluation(self):
        resp = ScoredResponse((-1.0, -2.0, -3.0))
        self.assertAlmostEqual(weighted_avg_logprob(resp, DecisionConfig(K=2, alpha=2.0)), -1.8)

    @settings(max_examples=100, deadline=None)
    @given(logp_lists)
    def test_alpha_one_is_mean(self, logps):
        resp = ScoredResponse(logps)
        self.assertAlmostEqual(weighted_avg_logprob(resp, DecisionConfig(K=3, alpha=1.0)),
                               float(np.mean(logps)), places=12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-6.0, -0.01), st.integers(1, 30), st.integers(1, 10),
           st.floats(1.0, 20.0))
    def test_constant_sequence(self, value, T, K, alpha):
        resp = ScoredResponse([value] * T)
        self.assertAlmostEqual(weighted_avg_logprob(resp, DecisionConfig(K=K, alpha=alpha)),
                               value, places=12)

    @settings(max_examples=100, deadline=None)
    @given(logp_lists, st.integers(1, 10), st.floats(1.0, 20.0))
    def test_bounded_by_extremes(self, logps, K, alpha):
        value = weighted_avg_logprob(ScoredResponse(logps), DecisionConfig(K=K, alpha=alpha))
        self.assertGreaterEqual(value, min(logps) - 1e-12)
        self.assertLessEqual(value, max(logps) + 1e-12)

    def test_unnormalized_is_weighted_sum(self):
        resp = ScoredResponse((-1.0, -2.0, -3.0))
        value, grad = sequence_logprob(resp, DecisionConfig(K=2, alpha=2.0,
                                                            length_normalized=False))
        self.assertAlmostEqual(value, -9.0)
        np.testing.assert_array_equal(grad, [2.0, 2.0, 1.0])

    def test_response_validation(self):
        for logps, r in (((), 1), ((-1.0,), 2), ((0.5,), 1), ((float("nan"),), 1)):
            with self.assertRaises(DomainError, msg=(logps, r)):
                ScoredResponse(logps, r)


class TestOddsRatio(unittest.TestCase):

    def test_identical_responses(self):
        resp = ScoredResponse((-1.2, -0.7))
        self.assertAlmostEqual(or_loss(resp, resp, DecisionConfig()), math.log(2), places=12)

    def test_scalar_formula(self):
        cfg = DecisionConfig(K=1, alpha=2.0)
        loss = or_loss(ScoredResponse((-0.5,)), ScoredResponse((-2.0,)), cfg)
        self.assertAlmostEqual(loss, scalar_or(-0.5, -2.0), places=12)
        gap = log_odds(-0.5) - log_odds(-2.0)
        self.assertAlmostEqual(gap, 2.287339, places=5)
        self.assertAlmostEqual(loss, 0.096706, places=5)

    def test_probability_one(self):
        with self.assertRaises(DomainError):
            log_odds(0.0)
        with self.assertRaises(DomainError):
            or_loss(ScoredResponse((0.0,)), ScoredResponse((-1.0,)), DecisionConfig())

    def test_total_composes(self):
        cfg = DecisionConfig(K=2, alpha=2.0, beta=0.1)
        out = dorpo_loss(ScoredResponse((-1.0, -2.0, -3.0)), ScoredResponse((-2.0, -2.0)), cfg)
        self.assertAlmostEqual(out.nll, 1.8, places=12)
        self.assertAlmostEqual(out.total, 1.8 + 0.1 * scalar_or(-1.8, -2.0), places=12)

    @settings(max_examples=100, deadline=None)
    @given(logp_lists, logp_lists, st.floats(0.05, 1.0))
    def test_alpha_one_reduces_to_orpo(self, chosen, rejected, beta):
        cfg = DecisionConfig(K=4, alpha=1.0, beta=beta)
        total = dorpo_loss(ScoredResponse(chosen), ScoredResponse(rejected), cfg).total
        self.assertAlmostEqual(total, orpo_loss(chosen, rejected, beta), places=10)

    @settings(max_examples=60, deadline=None)
    @given(logp_lists, logp_lists, st.integers(1, 5), st.floats(1.0, 5.0), st.booleans())
    def test_gradients_match_finite_differences(self, chosen, rejected, K, alpha, normalized):
        cfg = DecisionConfig(K=K, alpha=alpha, beta=0.3, length_normalized=normalized)
        w, l = ScoredResponse(chosen), ScoredResponse(rejected)
        out = dorpo_loss(w, l, cfg)
        num_w = numeric_grad(lambda x: dorpo_loss(ScoredResponse(x), l, cfg).total, chosen)
        num_l = numeric_grad(lambda x: dorpo_loss(w, ScoredResponse(x), cfg).total, rejected)
        np.testing.assert_allclose(out.grads_w, num_w, rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(out.grads_l, num_l, rtol=1e-5, atol=1e-7)


class TestGradientAllocation(unittest.TestCase):

    def test_fraction(self):
        self.assertAlmostEqual(decision_gradient_fraction(30, 8, 1), 8 / 30)
        self.assertEqual(decision_gradient_fraction(8, 8, 5.0), 1.0)
        self.assertAlmostEqual(decision_gradient_fraction(300, 8, 2), 16 / 308)

    def test_imbalance(self):
        self.assertAlmostEqual(imbalance_ratio(300, 30, 8, 1), 10.0)
        self.assertAlmostEqual(imbalance_ratio(300, 30, 8, 2), 308 / 38)
        self.assertAlmostEqual(imbalance_ratio(300, 30, 8, 1e9), 1.0, delta=1e-6)

    def test_invalid(self):
        with self.assertRaises(DomainError):
            imbalance_ratio(30, 300, 8, 2)
        with self.assertRaises(DomainError):
            decision_gradient_fraction(4, 8, 2)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 200), st.integers(1, 500))
    def test_imbalance_properties(self, K, extra_r, extra_c):
        T_r = K + extra_r
        T_c = T_r + extra_c
        gammas = [imbalance_ratio(T_c, T_r, K, a) for a in PROPERTY_ALPHA]
        self.assertAlmostEqual(gammas[0], T_c / T_r, places=12)
        for bigger, smaller in zip(gammas, gammas[1:]):
            self.assertGreater(bigger, smaller)
        self.assertTrue(all(g > 1.0 for g in gammas))
        self.assertAlmostEqual(gammas[-1], 1.0, delta=1e-6)

    def test_table(self):
        rows = phi_gamma_table()
        self.assertEqual(len(rows), 18)
        row = next(r for r in rows if r["K"] == 8 and r["alpha"] == 2.0)
        self.assertAlmostEqual(row["gamma"], 308 / 38)
        self.assertAlmostEqual(row["phi_chosen"], 16 / 308)

    def test_property_suite(self):
        results = check_properties(seed=3, trials=1000)
        self.assertEqual([name for name, _ in results],
                         ["imbalance ratio", "decision gradient fraction",
                          "weighted mean bounds and non-negative loss",
                          "analytic gradients and reduction"])
        self.assertTrue(all(ok for _, ok in results))


class TestToyScorer(unittest.TestCase):

    def test_uniform_scores(self):
        resp = ToyScorer.uniform(4, 8).score([0, 3, 7])
        np.testing.assert_allclose(resp.array(), [-math.log(8)] * 3)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        scorer = ToyScorer(rng.normal(size=(3, 4)))
        tokens = [2, 0, 3]
        upstream = np.array([0.5, -1.0, 2.0])

        def objective(flat):
            logp = ToyScorer(flat.reshape(3, 4)).score(tokens).array()
            return float(np.dot(upstream, logp))

        numeric = numeric_grad(objective, scorer.logits.ravel()).reshape(3, 4)
        np.testing.assert_allclose(scorer.backward(tokens, upstream), numeric, atol=1e-7)

    def test_out_of_range(self):
        with self.assertRaises(DomainError):
            ToyScorer.uniform(2, 4).score([0, 1, 2])
        with self.assertRaises(DomainError):
            ToyScorer.uniform(2, 4).score([5])


class TestToyLoop(unittest.TestCase):

    def test_single_pair_learns(self):
        pairs = make_toy_pairs(n_pairs=1)
        scorer = ToyScorer.uniform(24, 16)
        _, trace = toy_align_loop(pairs, scorer, DecisionConfig(K=8, alpha=2.0, beta=0.1),
                                  steps=200, lr=0.1)
        self.assertEqual(len(trace), 200)
        losses = [record.loss for record in trace[:10]]
        self.assertTrue(all(a > b for a, b in zip(losses, losses[1:])))
        self.assertGreater(trace[-1].gap, trace[0].gap)

    def test_eight_pairs_with_defaults(self):
        pairs = make_toy_pairs()
        self.assertEqual(len(pairs), 8)
        cfg = DecisionConfig(K=8, alpha=2.0, beta=0.1)
        _, trace = toy_align_loop(pairs, ToyScorer.uniform(24, 16), cfg, steps=200, lr=0.1)
        losses = [record.loss for record in trace[:10]]
        self.assertTrue(all(a > b for a, b in zip(losses, losses[1:])))
        gaps = [record.gap for record in trace]
        self.assertTrue(all(a < b for a, b in zip(gaps, gaps[1:])))

    def test_zero_steps(self):
        scorer = ToyScorer.uniform(24, 16)
        trained, trace = toy_align_loop(make_toy_pairs(), scorer, steps=0)
        self.assertEqual(trace, [])
        np.testing.assert_array_equal(trained.logits, scorer.logits)

    def test_input_scorer_untouched(self):
        scorer = ToyScorer.uniform(24, 16)
        toy_align_loop(make_toy_pairs(), scorer, steps=3)
        np.testing.assert_array_equal(scorer.logits, np.zeros((24, 16)))

    def test_decision_weight_speeds_up_window(self):
        pairs = make_toy_pairs()
        runs = {}
        for alpha in (1.0, 2.0):
            cfg = DecisionConfig(K=4, alpha=alpha, beta=0.1)
            _, trace = toy_align_loop(pairs, ToyScorer.uniform(24, 16), cfg, steps=400, lr=0.5)
            runs[alpha] = steps_to_threshold(trace, -1.0)
        self.assertIsNotNone(runs[2.0])
        self.assertTrue(runs[1.0] is None or runs[2.0] < runs[1.0])

    def test_toy_pairs(self):
        pairs = make_toy_pairs(n_pairs=8, vocab=16, chosen_len=24, rejected_len=4, seed=0)
        self.assertEqual([len(c) for c, _ in pairs], [24, 23, 22, 21] * 2)
        self.assertEqual([len(r) for _, r in pairs], [4, 3] * 4)
        self.assertTrue(all(t < 8 for c, _ in pairs for t in c))
        self.assertTrue(all(t >= 8 for _, r in pairs for t in r))
        self.assertEqual(pairs, make_toy_pairs(seed=0))

    def test_divergence_reports_step(self):
        def blow_up(chosen, rejected, cfg):
            return LossBreakdown(float("inf"), 0.0, float("inf"), np.zeros(chosen.T),
                                 np.zeros(rejected.T))

        with mock.patch.object(dorpo_core, "dorpo_loss", side_effect=blow_up):
            with self.assertRaises(DivergenceError) as ctx:
                toy_align_loop(make_toy_pairs(n_pairs=2), ToyScorer.uniform(24, 16), steps=5)
        self.assertEqual(ctx.exception.step, 0)

    def test_sweep(self):
        pairs = make_toy_pairs(n_pairs=2, chosen_len=8, rejected_len=3)
        points = sweep_toy(pairs, K_grid=(2, 4), alpha_grid=(1.0, 2.0), steps=5)
        self.assertEqual([(p.K, p.alpha) for p in points],
                         [(2, 1.0), (2, 2.0), (4, 1.0), (4, 2.0)])
        self.assertTrue(all(math.isfinite(p.final_loss) for p in points))


if __name__ == "__main__":
    unittest.main()
