import os
import unittest

import numpy as np
from scipy.stats import norm

from mtbart.bart import (BartConfig, BartFit, PosteriorPredictions, bart_discard, bart_effect,
                         fit_probit_bart, predict_counterfactuals, select_k_cv)
from mtbart.bart.sampler import _Context, bart_design, grow_log_ratio, prune_log_ratio
from mtbart.bart.tree import Forest, LeafModel, SplitSpace, Tree, TreePrior
from mtbart.core import ATE, ATT, EstimandSpec
from mtbart.errors import NoCommonSupportError
from tests.helpers import confounded_dataset, make_dataset

SMALL = BartConfig(n_trees=5, total_iterations=30, burn_in=10)


class TestSplitSpace(unittest.TestCase):
    def test_options(self):
        """
        A column with one distinct value cannot be split; a categorical needs two present levels
        """
        X = np.array([[1.0, 0], [1.0, 0], [1.0, 2], [1.0, 2]])
        space = SplitSpace(X, [0, 3])
        options = space.options(np.arange(4))
        self.assertFalse(options.valid[0])
        self.assertTrue(options.valid[1])
        # two present levels and one absent level: 2 proper subsets times 2 sides for the absent one
        self.assertAlmostEqual(options.log_counts[1], np.log(4.0))
        self.assertFalse(space.options(np.array([0, 1])).can_split)

    def test_categorical_rule_is_proper_subset(self):
        """
        Categorical rules send at least one present level each way
        """
        X = np.array([[0.0], [1.0], [2.0], [1.0]])
        space = SplitSpace(X, [3])
        options = space.options(np.arange(4))
        rng = np.random.default_rng(0)
        for _ in range(20):
            column, _, mask = space.draw_rule(options, rng)
            left = space.goes_left(column, np.nan, mask, np.arange(4))
            self.assertTrue(left.any())
            self.assertFalse(left.all())


class TestMoveRatios(unittest.TestCase):
    def test_grow_and_prune_are_inverse(self):
        """
        Growing a split and pruning it back have opposite log acceptance ratios
        """
        rng = np.random.default_rng(2)
        X = np.column_stack([rng.standard_normal(50), rng.integers(0, 3, 50)])
        space = SplitSpace(X, [0, 3])
        context = _Context(space, TreePrior(), LeafModel(0.3), (0.25, 0.25, 0.40, 0.10))
        residual = rng.standard_normal(50)
        tree = Tree(50, space.options(np.arange(50)))

        cut = float(space.grids[0][40])
        grow_ratio, proposal = grow_log_ratio(tree, 0, 0, cut, 0, residual, context)
        tree.grow(0, 0, cut, 0, *proposal)
        prune_ratio, indices = prune_log_ratio(tree, 0, residual, context)

        self.assertAlmostEqual(grow_ratio, -prune_ratio, places=9)
        np.testing.assert_array_equal(indices, np.arange(50))

    def test_grown_tree_partitions_units(self):
        """
        After a grow every unit sits in exactly one of the two new leaves
        """
        X = np.arange(10, dtype=float)[:, None]
        space = SplitSpace(X, [0])
        tree = Tree(10, space.options(np.arange(10)))
        left = np.flatnonzero(X[:, 0] <= 4.5)
        right = np.flatnonzero(X[:, 0] > 4.5)
        tree.grow(0, 0, 4.5, 0, left, right, space.options(left), space.options(right))
        self.assertEqual(tree.n_leaves(), 2)
        np.testing.assert_array_equal(tree.members(tree.nodes[0].left), left)
        np.testing.assert_array_equal(tree.members(0), np.arange(10))
        self.assertEqual(tree.nog(), [0])


class TestPredictions(unittest.TestCase):
    def test_zero_leaves_give_one_half(self):
        """
        A forest of zero leaves predicts Phi(0) = 0.5 everywhere with zero spread
        """
        dataset = make_dataset([[0.2], [0.5], [0.9]], [1, 2, 3], [0, 1, 1])
        X, levels = bart_design(dataset)
        space = SplitSpace(X, levels)
        forest = Forest.from_trees([Tree(3, space.options(np.arange(3)))], space)
        fit = BartFit(forests=[forest] * 3, space=space, column_meta=dataset.column_meta,
                      n_treatments=3, config=SMALL)
        preds = predict_counterfactuals(fit, dataset)
        self.assertEqual(preds.draws.shape, (3, 3, 3))
        np.testing.assert_allclose(preds.draws, 0.5)
        np.testing.assert_array_equal(preds.posterior_sd, np.zeros((3, 3)))

    def test_layout_mismatch(self):
        """
        Predicting on other columns is an error
        """
        dataset = make_dataset([[0.2], [0.5], [0.9]], [1, 2, 3], [0, 1, 1])
        X, levels = bart_design(dataset)
        space = SplitSpace(X, levels)
        forest = Forest.from_trees([Tree(3, space.options(np.arange(3)))], space)
        fit = BartFit(forests=[forest], space=space, column_meta=dataset.column_meta,
                      n_treatments=3, config=SMALL)
        other = make_dataset([[0.2, 1.0], [0.5, 1.0], [0.9, 1.0]], [1, 2, 3])
        with self.assertRaises(ValueError):
            predict_counterfactuals(fit, other)


class TestBartEffect(unittest.TestCase):
    def test_two_unit_example(self):
        """
        f(1) = (0.8, 0.6) and f(2) = (0.5, 0.5) give an ATT of 0.2
        """
        preds = PosteriorPredictions.from_draws([[[0.8, 0.5], [0.6, 0.5]]])
        estimate = bart_effect(preds, [1, 1], EstimandSpec(ATT, (1,), (2,)), [0, 1])
        self.assertAlmostEqual(estimate.point, 0.2, places=6)
        self.assertEqual(estimate.ci_lower, estimate.ci_upper)
        self.assertEqual(estimate.interval_kind, "posterior-credible")
        self.assertEqual(estimate.n_used, 2)

    def test_matches_triple_loop(self):
        """
        The estimate equals an explicit loop over draws, units and arms
        """
        rng = np.random.default_rng(8)
        preds = PosteriorPredictions.from_draws(rng.uniform(0.05, 0.95, size=(3, 5, 3)))
        treatment = np.array([1, 2, 1, 3, 1])
        draws = preds.draws.astype(np.float64)
        for estimand in (EstimandSpec(ATE, (1, 2), (3,)), EstimandSpec(ATT, (1,), (2, 3))):
            retained = estimand.eligible(treatment)
            total = 0.0
            for l in range(3):
                for i in retained:
                    first = sum(draws[l, i, w - 1] for w in estimand.s1) / len(estimand.s1)
                    second = sum(draws[l, i, w - 1] for w in estimand.s2) / len(estimand.s2)
                    total += first - second
            expected = total / (3 * len(retained))
            with self.subTest(estimand=estimand.label()):
                estimate = bart_effect(preds, treatment, estimand, retained)
                self.assertAlmostEqual(estimate.point, expected, delta=1e-12)

    def test_identical_arms(self):
        """
        Equal predictions in both arms give a point of 0 with a zero-width interval
        """
        same = np.random.default_rng(1).uniform(0.1, 0.9, size=(4, 6, 1))
        preds = PosteriorPredictions.from_draws(np.repeat(same, 2, axis=2))
        estimate = bart_effect(preds, [1, 1, 1, 2, 2, 2], EstimandSpec(ATT, (1,), (2,)), [0, 1, 2])
        self.assertEqual((estimate.point, estimate.ci_lower, estimate.ci_upper), (0.0, 0.0, 0.0))
        self.assertEqual(estimate.n_discarded, 0)

    def test_retained_checks(self):
        """
        The retained set must be nonempty, and inside the reference group for an ATT
        """
        preds = PosteriorPredictions.from_draws(np.full((2, 3, 2), 0.5))
        att = EstimandSpec(ATT, (1,), (2,))
        with self.assertRaises(NoCommonSupportError):
            bart_effect(preds, [1, 2, 2], att, [])
        with self.assertRaises(ValueError):
            bart_effect(preds, [1, 2, 2], att, [0, 1])


class TestBartDiscard(unittest.TestCase):
    def setUp(self):
        self.treatment = np.array([1, 1, 2, 3])
        sd = np.array([[0.2, 0.3, 0.25],
                       [0.1, 0.1, 0.3],
                       [0.5, 0.1, 0.5],
                       [0.1, 0.1, 0.2]])
        self.preds = PosteriorPredictions(draws=np.full((1, 4, 3), 0.5, dtype=np.float32),
                                          posterior_sd=sd)

    def test_conjunction_over_arms(self):
        """
        A unit is discarded only when every counterfactual SD exceeds its group's threshold
        """
        result = bart_discard(self.preds, self.treatment, EstimandSpec(ATT, (1,), (2, 3)))
        np.testing.assert_array_equal(result.discarded, [0])
        np.testing.assert_array_equal(result.retained, [1])
        self.assertEqual(result.n_eligible, 2)
        self.assertAlmostEqual(result.discard_fraction, 0.5)

    def test_per_pair(self):
        """
        With per_pair only the estimand's comparison arm counts
        """
        result = bart_discard(self.preds, self.treatment, EstimandSpec(ATT, (1,), (3,)),
                              per_pair=True)
        np.testing.assert_array_equal(result.discarded, [0, 1])

    def test_ate_applies_to_every_group(self):
        """
        For an ATE every treatment group gets its own threshold
        """
        result = bart_discard(self.preds, self.treatment, EstimandSpec(ATE, (1,), (2,)))
        np.testing.assert_array_equal(result.discarded, [0, 2])
        self.assertEqual(result.per_group, {1: 1, 2: 1, 3: 0})


class TestSampler(unittest.TestCase):
    def test_same_seed_same_draws(self):
        """
        The chain is a function of the seed and the configuration
        """
        dataset = confounded_dataset(n=60, seed=2)
        first = predict_counterfactuals(fit_probit_bart(dataset, SMALL, seed=4), dataset)
        second = predict_counterfactuals(fit_probit_bart(dataset, SMALL, seed=4), dataset,
                                         threads=2)
        np.testing.assert_array_equal(first.draws, second.draws)
        self.assertEqual(first.n_draws, 20)
        self.assertGreater(first.draws.min(), 0.0)
        self.assertLess(first.draws.max(), 1.0)

    def test_trace(self):
        """
        The trace has one row per iteration with the move counts
        """
        fit = fit_probit_bart(confounded_dataset(n=60, seed=2), SMALL, seed=1)
        self.assertEqual(len(fit.trace), 30)
        tried = fit.trace[["grow_tried", "prune_tried", "change_tried", "swap_tried"]].sum(axis=1)
        self.assertTrue((tried == SMALL.n_trees).all())

    def test_needs_outcome(self):
        """
        BART cannot be fit without an outcome
        """
        with self.assertRaises(ValueError):
            fit_probit_bart(make_dataset([0.1, 0.2], [1, 2]), SMALL)

    def test_config_checks(self):
        """
        Burn-in must be smaller than the number of iterations
        """
        with self.assertRaises(ValueError):
            BartConfig(total_iterations=100, burn_in=100)
        with self.assertRaises(ValueError):
            BartConfig(proposal=(0.5, 0.5, 0.5, 0.0))

    def test_prevalence_without_signal(self):
        """
        With an outcome unrelated to the covariates the fit recovers the prevalence
        """
        rng = np.random.default_rng(6)
        dataset = make_dataset(rng.standard_normal((200, 2)), rng.integers(1, 3, 200),
                               (rng.random(200) < 0.3).astype(int))
        config = BartConfig(n_trees=10, total_iterations=150, burn_in=50)
        preds = predict_counterfactuals(fit_probit_bart(dataset, config, seed=3), dataset)
        self.assertAlmostEqual(preds.mean().mean(), dataset.outcome.mean(), delta=0.06)

    @unittest.skipUnless(os.environ.get("MTBART_SLOW"), "slow")
    def test_prevalence_large_sample(self):
        """
        At n = 2000 every unit's posterior mean is within 0.03 of the prevalence
        """
        rng = np.random.default_rng(7)
        dataset = make_dataset(rng.standard_normal((2000, 3)), rng.integers(1, 4, 2000),
                               (rng.random(2000) < 0.3).astype(int))
        config = BartConfig(n_trees=50, total_iterations=1000, burn_in=500)
        preds = predict_counterfactuals(fit_probit_bart(dataset, config, seed=3), dataset)
        deviation = np.abs(preds.mean() - dataset.outcome.mean())
        self.assertLess(deviation.max(), 0.03)

    @unittest.skipUnless(os.environ.get("MTBART_SLOW"), "slow")
    def test_recovers_step_function(self):
        """
        With P(Y = 1 | x) = Phi(g(x)) for a step g, the posterior mean is within
        0.05 RMSE of the truth and calibrated within 0.05 over deciles
        """
        rng = np.random.default_rng(17)
        covariates = rng.uniform(-1.0, 1.0, size=(2000, 3))
        truth = norm.cdf(np.where(covariates[:, 0] < 0.0, -0.8, 0.8))
        outcome = (rng.random(2000) < truth).astype(int)
        dataset = make_dataset(covariates, rng.integers(1, 3, 2000), outcome)
        config = BartConfig(n_trees=50, total_iterations=2000, burn_in=1000)
        preds = predict_counterfactuals(fit_probit_bart(dataset, config, seed=5), dataset)
        fitted = preds.mean()[np.arange(2000), dataset.treatment - 1]
        self.assertLess(np.sqrt(np.mean((fitted - truth) ** 2)), 0.05)

        deciles = np.array_split(np.argsort(fitted, kind="stable"), 10)
        calibration = np.mean([abs(fitted[units].mean() - outcome[units].mean())
                               for units in deciles])
        self.assertLess(calibration, 0.05)


class TestSelectK(unittest.TestCase):
    def test_single_value_grid(self):
        """
        A one-value grid returns that value without fitting
        """
        self.assertEqual(select_k_cv(confounded_dataset(n=50), [2]), 2.0)

    def test_picks_from_grid(self):
        """
        The chosen k is one of the grid values
        """
        dataset = confounded_dataset(n=100, seed=3)
        chosen = select_k_cv(dataset, [1, 3], folds=2, seed=0, config=SMALL)
        self.assertIn(chosen, (1.0, 3.0))


if __name__ == '__main__':
    unittest.main()
