import unittest

import numpy as np

from mtbart.core import ATE, ATT, EstimandSpec, GpsMatrix
from mtbart.errors import EstimationError, PositivityError
from mtbart.weighting import (WeightVector, bootstrap_ci, iptw_estimate, iptw_weights,
                              trim_weights)
from tests.helpers import make_dataset

ATT_1_2 = EstimandSpec(ATT, (1,), (2,))
ATE_1_2 = EstimandSpec(ATE, (1,), (2,))


class TestIptwWeights(unittest.TestCase):
    def test_ate_weight_is_inverse(self):
        """
        An ATE weight is 1 / r(W, X); units outside the estimand get 0
        """
        gps = GpsMatrix(np.array([[0.25, 0.5, 0.25], [0.5, 0.25, 0.25], [0.2, 0.2, 0.6]]))
        weights = iptw_weights(gps, [1, 2, 3], ATE_1_2)
        np.testing.assert_allclose(weights.weights, [4.0, 4.0, 0.0])

    def test_att_weight_is_ratio(self):
        """
        A comparison unit of an ATT gets r(t, X) / r(W, X); reference units get 1
        """
        gps = GpsMatrix(np.array([[0.6, 0.2, 0.2], [0.2, 0.4, 0.4]]))
        weights = iptw_weights(gps, [1, 2], ATT_1_2)
        np.testing.assert_allclose(weights.weights, [1.0, 0.5])

    def test_uniform_gps(self):
        """
        With a uniform GPS every comparison weight of an ATT is 1
        """
        gps = GpsMatrix(np.full((4, 3), 1.0 / 3.0))
        weights = iptw_weights(gps, [1, 2, 2, 3], EstimandSpec(ATT, (1,), (2, 3)))
        np.testing.assert_allclose(weights.weights, np.ones(4))

    def test_positivity_violation(self):
        """
        A zero GPS for a unit that needs a weight is an error
        """
        gps = GpsMatrix(np.array([[0.5, 0.5, 0.0], [0.5, 0.0, 0.5]]))
        with self.assertRaises(PositivityError):
            iptw_weights(gps, [1, 2], ATE_1_2)


class TestTrimWeights(unittest.TestCase):
    def test_caps_at_percentiles(self):
        """
        Weights 1..100 are capped at their 5th and 95th percentile values
        """
        treatment = np.tile([1, 2], 50)
        weights = WeightVector(np.arange(1.0, 101.0), ATE_1_2, treatment)
        trimmed = trim_weights(weights)
        self.assertEqual(trimmed.weights.max(), 95.0)
        self.assertEqual(trimmed.weights.min(), 5.0)
        self.assertTrue(trimmed.trimmed)

    def test_trimming_is_idempotent(self):
        """
        Trimming twice gives the same weights as trimming once
        """
        rng = np.random.default_rng(3)
        weights = WeightVector(rng.exponential(size=200), ATE_1_2, rng.integers(1, 3, 200))
        once = trim_weights(weights)
        twice = trim_weights(once)
        np.testing.assert_array_equal(once.weights, twice.weights)

    def test_equal_weights_unchanged(self):
        """
        Equal weights are left alone
        """
        weights = WeightVector(np.full(10, 2.0), ATE_1_2, np.tile([1, 2], 5))
        np.testing.assert_array_equal(trim_weights(weights).weights, weights.weights)

    def test_att_reference_untouched(self):
        """
        The reference group of an ATT keeps weight 1
        """
        treatment = np.array([1] * 5 + [2] * 20)
        values = np.concatenate([np.ones(5), np.linspace(0.01, 10.0, 20)])
        trimmed = trim_weights(WeightVector(values, ATT_1_2, treatment))
        np.testing.assert_array_equal(trimmed.weights[:5], np.ones(5))
        self.assertLess(trimmed.weights[5:].max(), 10.0)

    def test_invalid_quantiles(self):
        """
        Quantiles must satisfy 0 < lower < upper < 1
        """
        weights = WeightVector(np.ones(4), ATE_1_2, [1, 2, 1, 2])
        with self.assertRaises(ValueError):
            trim_weights(weights, 0.5, 0.5)


class TestIptwEstimate(unittest.TestCase):
    def setUp(self):
        self.dataset = make_dataset(np.zeros(4), [1, 1, 2, 2], [1, 0, 1, 0])

    def test_normalized_means(self):
        """
        0.5 - 0.5 / 1.5 for the hand-computed four-unit example
        """
        weights = WeightVector([1.0, 1.0, 0.5, 1.0], ATT_1_2, self.dataset.treatment)
        self.assertAlmostEqual(iptw_estimate(self.dataset, weights), 0.5 - 0.5 / 1.5)

    def test_scale_invariance(self):
        """
        Rescaling all weights leaves the estimate unchanged
        """
        weights = WeightVector([1.0, 1.0, 0.5, 1.0], ATT_1_2, self.dataset.treatment)
        self.assertAlmostEqual(iptw_estimate(self.dataset, weights),
                               iptw_estimate(self.dataset, weights.scaled(7.5)))

    def test_identical_outcomes(self):
        """
        Equal outcomes in both groups give 0
        """
        dataset = self.dataset.with_outcome([1, 1, 1, 1])
        weights = WeightVector([1.0, 2.0, 0.5, 1.0], ATT_1_2, dataset.treatment)
        self.assertEqual(iptw_estimate(dataset, weights), 0.0)

    def test_zero_weight_sum(self):
        """
        A group whose weights sum to 0 cannot be averaged
        """
        weights = WeightVector([1.0, 1.0, 0.0, 0.0], ATT_1_2, self.dataset.treatment)
        with self.assertRaises(EstimationError):
            iptw_estimate(self.dataset, weights)


class TestBootstrap(unittest.TestCase):
    @staticmethod
    def unweighted(dataset):
        weights = WeightVector(np.ones(dataset.n_units), ATE_1_2, dataset.treatment)
        return iptw_estimate(dataset, weights)

    def test_degenerate_interval(self):
        """
        Equal outcomes everywhere give a zero-width interval at 0
        """
        dataset = make_dataset(np.zeros(20), np.tile([1, 2], 10), np.ones(20, dtype=int))
        self.assertEqual(bootstrap_ci(dataset, self.unweighted, 100, seed=1), (0.0, 0.0))

    def test_same_seed_same_interval(self):
        """
        The interval is a function of the seed
        """
        rng = np.random.default_rng(0)
        dataset = make_dataset(np.zeros(60), np.tile([1, 2], 30), rng.integers(0, 2, 60))
        first = bootstrap_ci(dataset, self.unweighted, 150, seed=9)
        second = bootstrap_ci(dataset, self.unweighted, 150, seed=9, threads=3)
        self.assertEqual(first, second)
        self.assertLessEqual(first[0], first[1])

    def test_vector_estimator(self):
        """
        A vector estimator gets one interval per component
        """
        dataset = make_dataset(np.zeros(20), np.tile([1, 2], 10), np.ones(20, dtype=int))
        low, high = bootstrap_ci(dataset, lambda d: [self.unweighted(d), 1.0], 100, seed=2)
        np.testing.assert_allclose(low, [0.0, 1.0])
        np.testing.assert_allclose(high, [0.0, 1.0])

    def test_too_few_replicates(self):
        """
        Fewer than 100 resamples is rejected
        """
        dataset = make_dataset(np.zeros(4), [1, 2, 1, 2], [0, 1, 0, 1])
        with self.assertRaises(ValueError):
            bootstrap_ci(dataset, self.unweighted, 50)

    def test_failing_estimator(self):
        """
        An estimator that always fails makes the bootstrap fail
        """
        dataset = make_dataset(np.zeros(10), np.tile([1, 2], 5), np.tile([0, 1], 5))

        def broken(_):
            raise EstimationError("no fit")

        with self.assertRaises(EstimationError):
            bootstrap_ci(dataset, broken, 100)

    def test_failures_share_one_budget(self):
        """
        Resampling stops once the failed attempts of all replicates pass 10%
        """
        dataset = make_dataset(np.zeros(40), np.tile([1, 2], 20), np.tile([0, 1], 20))
        calls = []

        def broken(_):
            calls.append(1)
            raise EstimationError("no fit")

        with self.assertRaises(EstimationError) as context:
            bootstrap_ci(dataset, broken, 200)
        self.assertEqual(len(calls), 21)
        self.assertIn("21 failed resample attempts for 200 bootstrap replicates",
                      str(context.exception))

    def test_occasional_failures_are_redrawn(self):
        """
        A few failed resamples are redrawn and the interval is still returned
        """
        dataset = make_dataset(np.zeros(40), np.tile([1, 2], 20), np.ones(40, dtype=int))
        calls = []

        def flaky(resampled):
            calls.append(1)
            if len(calls) % 25 == 0:
                raise EstimationError("no fit")
            return self.unweighted(resampled)

        self.assertEqual(bootstrap_ci(dataset, flaky, 100, seed=3), (0.0, 0.0))
        self.assertEqual(len(calls), 104)


if __name__ == '__main__':
    unittest.main()
