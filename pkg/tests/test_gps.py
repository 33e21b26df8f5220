import unittest

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from mtbart.core import ATE, ATT, EstimandSpec, GpsMatrix, design_matrix
from mtbart.gps import (MlrModel, balance_table, fit_gbm, fit_mlr, gbm_balance_path,
                        predict_gbm, predict_mlr, rectangular_support, standardized_bias)
from tests.helpers import confounded_dataset, make_dataset


def intercept_only(sizes):
    treatment = np.repeat(np.arange(1, len(sizes) + 1), sizes)
    return make_dataset(np.zeros((len(treatment), 0)), treatment)


class TestMlr(unittest.TestCase):
    def test_intercept_only_equal_groups(self):
        """
        With equal group sizes every fitted probability is 1/3
        """
        dataset = intercept_only([400, 400, 400])
        gps = predict_mlr(fit_mlr(dataset), dataset)
        np.testing.assert_allclose(gps.values, np.full((1200, 3), 1.0 / 3.0), atol=1e-8)

    def test_intercept_only_frequencies(self):
        """
        The intercept-only fit reproduces the class frequencies
        """
        dataset = intercept_only([400, 2000, 1600])
        gps = predict_mlr(fit_mlr(dataset), dataset)
        np.testing.assert_allclose(gps.values[0], [0.1, 0.5, 0.4], atol=1e-8)

    def test_matches_direct_optimization(self):
        """
        Newton-Raphson agrees with a derivative-free maximization of the log-likelihood
        """
        rng = np.random.default_rng(11)
        x = rng.standard_normal(200)
        scores = np.column_stack([0.3 + 0.8 * x, -0.2 - 0.5 * x, np.zeros(200)])
        probabilities = np.exp(scores - logsumexp(scores, axis=1, keepdims=True))
        treatment = (rng.random(200)[:, None] > np.cumsum(probabilities, axis=1)).sum(axis=1) + 1
        dataset = make_dataset(x, treatment)
        model = fit_mlr(dataset, ridge_penalty=0.0)

        onehot = np.eye(3)[treatment - 1]

        def negative_loglik(theta):
            coefficients = theta.reshape(2, 2)
            linear = np.column_stack([coefficients[:, 0] + np.outer(x, coefficients[:, 1]),
                                      np.zeros(200)])
            return -(np.sum(onehot * linear) - np.sum(logsumexp(linear, axis=1)))

        oracle = minimize(negative_loglik, np.zeros(4), method="Nelder-Mead",
                          options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 40000,
                                   "maxfev": 40000})
        np.testing.assert_allclose(model.coefficients.ravel(), oracle.x, atol=1e-3)

    def test_zero_coefficients_uniform(self):
        """
        All-zero coefficients give 1/Z in every row
        """
        model = MlrModel(coefficients=np.zeros((2, 2)), ridge_penalty=0.0, column_names=("x1",))
        gps = predict_mlr(model, make_dataset([0.5, -1.0], [1, 2], n_treatments=3))
        np.testing.assert_allclose(gps.values, np.full((2, 3), 1.0 / 3.0))

    def test_column_mismatch(self):
        """
        Predicting on different columns is an error
        """
        model = MlrModel(coefficients=np.zeros((2, 2)), ridge_penalty=0.0, column_names=("age",))
        with self.assertRaises(ValueError):
            predict_mlr(model, make_dataset([0.5, -1.0, 2.0], [1, 2, 3]))

    def test_negative_penalty(self):
        """
        The ridge penalty cannot be negative
        """
        with self.assertRaises(ValueError):
            fit_mlr(intercept_only([5, 5, 5]), ridge_penalty=-1.0)


class TestStandardizedBias(unittest.TestCase):
    def setUp(self):
        half = 1.0 / np.sqrt(2.0)
        self.dataset = make_dataset([1 - half, 1 + half, -half, half], [1, 1, 2, 2])

    def test_definition(self):
        """
        Group means 1 and 0 with pooled SD 1 give a standardized bias of 1
        """
        table = standardized_bias(self.dataset, np.ones(4), (1, 2))
        self.assertAlmostEqual(table.entries["std_bias"].iloc[0], 1.0)
        self.assertAlmostEqual(table.max_abs, 1.0)

    def test_antisymmetric(self):
        """
        Swapping the pair flips the sign
        """
        forward = standardized_bias(self.dataset, np.ones(4), (1, 2)).entries["std_bias"]
        backward = standardized_bias(self.dataset, np.ones(4), (2, 1)).entries["std_bias"]
        np.testing.assert_allclose(forward, -backward)

    def test_identical_groups(self):
        """
        Copies of the same covariates balance exactly
        """
        dataset = make_dataset([[0.3, 1], [1.2, 0], [0.3, 1], [1.2, 0]], [1, 1, 2, 2],
                               categorical={1: 2})
        table = standardized_bias(dataset, np.ones(4), (1, 2))
        self.assertEqual(table.max_abs, 0.0)

    def test_zero_sd_flagged(self):
        """
        Zero pooled SD with different means is flagged and left out of max_abs
        """
        dataset = make_dataset([[1.0, 0.0], [1.0, 1.0], [2.0, 0.5], [2.0, 1.5]], [1, 1, 2, 2])
        table = standardized_bias(dataset, np.ones(4), (1, 2))
        self.assertEqual(len(table.flagged), 1)
        self.assertEqual(table.flagged["covariate"].iloc[0], "x1")
        self.assertTrue(np.isfinite(table.max_abs))

    def test_balance_table_pairs(self):
        """
        An ATT balances the reference against each comparison arm, an ATE every pair
        """
        dataset = make_dataset([0.1, 0.5, 0.9, 0.2, 0.4, 0.8], [1, 2, 3, 1, 2, 3])
        att = balance_table(dataset, np.ones(6), EstimandSpec(ATT, (1,), (2, 3)))
        self.assertEqual(list(zip(att.entries.w, att.entries.w_other)), [(1, 2), (1, 3)])
        ate = balance_table(dataset, np.ones(6), EstimandSpec(ATE, (1, 2), (3,)))
        self.assertEqual(len(ate.entries), 3)


class TestGbm(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.dataset = confounded_dataset(n=400, seed=5)
        cls.model = fit_gbm(cls.dataset, shrinkage=0.1, max_depth=2, max_iterations=60,
                            eval_stride=10, seed=1)

    def test_balance_path(self):
        """
        The path holds round 0 and every eval_stride-th round; the selected round minimizes it
        """
        path = gbm_balance_path(self.model)
        self.assertEqual(list(path["iteration"]), [0, 10, 20, 30, 40, 50, 60])
        selected = path[path["iteration"] == self.model.selected_iteration]["max_abs"].iloc[0]
        self.assertEqual(selected, path["max_abs"].min())

    def test_boosting_improves_balance(self):
        """
        With a strong confounder the selected round balances better than round 0
        """
        path = gbm_balance_path(self.model)
        self.assertGreater(self.model.selected_iteration, 0)
        self.assertLess(path["max_abs"].min(), path["max_abs"].iloc[0])

    def test_round_zero_is_class_frequencies(self):
        """
        Without boosting rounds every row equals the training class frequencies
        """
        gps = predict_gbm(self.model, self.dataset, iteration=0)
        expected = self.dataset.group_sizes() / self.dataset.n_units
        np.testing.assert_allclose(gps.values[0], expected)
        np.testing.assert_allclose(gps.values[-1], expected)

    def test_last_round_is_full_model(self):
        """
        Predicting at the last round equals the fitted booster's prediction
        """
        gps = predict_gbm(self.model, self.dataset, iteration=60)
        design, _ = design_matrix(self.dataset)
        full = GpsMatrix.from_probabilities(self.model.booster.predict_proba(design))
        np.testing.assert_allclose(gps.values, full.values)

    def test_iteration_out_of_range(self):
        """
        Rounds beyond the fit are rejected
        """
        with self.assertRaises(ValueError):
            predict_gbm(self.model, self.dataset, iteration=61)

    def test_stride_larger_than_rounds(self):
        """
        max_iterations must be at least eval_stride
        """
        with self.assertRaises(ValueError):
            fit_gbm(self.dataset, max_iterations=5, eval_stride=10)


class TestGpsRows(unittest.TestCase):
    @staticmethod
    def worst_row_deviation(gps):
        return float(np.max(np.abs(gps.values.sum(axis=1) - 1.0)))

    def test_random_mlr_models(self):
        """
        Rows of 1000 random multinomial logit models sum to 1 within 1e-8
        """
        rng = np.random.default_rng(21)
        for _ in range(1000):
            n_treatments = int(rng.integers(2, 6))
            n_columns = int(rng.integers(1, 4))
            scale = rng.uniform(0.1, 30.0)
            dataset = make_dataset(rng.standard_normal((50, n_columns)),
                                   rng.integers(1, n_treatments + 1, 50),
                                   n_treatments=n_treatments)
            model = MlrModel(coefficients=scale * rng.standard_normal((n_treatments - 1,
                                                                       n_columns + 1)),
                             ridge_penalty=0.0,
                             column_names=tuple(f"x{j + 1}" for j in range(n_columns)))
            gps = predict_mlr(model, dataset)
            self.assertLessEqual(self.worst_row_deviation(gps), 1e-8)
            self.assertGreater(gps.values.min(), 0.0)

    def test_random_gbm_models(self):
        """
        Rows of boosted models at every round sum to 1 within 1e-8
        """
        for seed in range(10):
            dataset = confounded_dataset(n=200, seed=seed)
            model = fit_gbm(dataset, shrinkage=0.3, max_depth=2, max_iterations=30,
                            eval_stride=10, seed=seed)
            for iteration in range(0, 31, 3):
                gps = predict_gbm(model, dataset, iteration=iteration)
                self.assertLessEqual(self.worst_row_deviation(gps), 1e-8)


class TestRectangularSupport(unittest.TestCase):
    @staticmethod
    def gps_from_first_column(first):
        first = np.asarray(first, dtype=float)
        rest = (1.0 - first) / 2.0
        return GpsMatrix(np.column_stack([first, rest, rest]))

    def test_max_of_minimums(self):
        """
        low is the largest group minimum and high the smallest group maximum
        """
        gps = self.gps_from_first_column([0.05, 0.9, 0.01, 0.8, 0.02, 0.85])
        support = rectangular_support(gps, [1, 1, 2, 2, 3, 3])
        self.assertAlmostEqual(support.low[0], 0.05)
        self.assertAlmostEqual(support.high[0], 0.8)
        np.testing.assert_array_equal(support.retained, [0, 3])

    def test_identical_ranges_keep_everyone(self):
        """
        Groups with the same GPS range are all retained
        """
        gps = self.gps_from_first_column([0.2, 0.6, 0.2, 0.6, 0.6, 0.2])
        support = rectangular_support(gps, [1, 1, 2, 2, 3, 3])
        np.testing.assert_array_equal(support.retained, np.arange(6))
        self.assertEqual(support.empty_intervals, ())

    def test_empty_support(self):
        """
        Disjoint ranges give an empty interval and no retained units
        """
        gps = self.gps_from_first_column([0.7, 0.8, 0.1, 0.2, 0.4, 0.5])
        support = rectangular_support(gps, [1, 1, 2, 2, 3, 3])
        self.assertIn(1, support.empty_intervals)
        self.assertTrue(support.is_empty)

    def test_eligible_restriction(self):
        """
        Only eligible units can be retained
        """
        gps = self.gps_from_first_column([0.2, 0.6, 0.2, 0.6, 0.6, 0.2])
        support = rectangular_support(gps, [1, 1, 2, 2, 3, 3], eligible=[0, 1])
        np.testing.assert_array_equal(support.retained, [0, 1])


if __name__ == '__main__':
    unittest.main()
