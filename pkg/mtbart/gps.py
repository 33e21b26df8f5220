"""
This module estimates generalized propensity scores (GPS) with a multinomial
logistic regression (MLR) or with multinomial gradient boosting (GBM), and
computes the covariate balance diagnostics and the rectangular common support
region built on them.
"""

import logging
import time
from dataclasses import dataclass, field
from itertools import islice
from typing import Optional, Tuple

import humanize
import numpy as np
import pandas as pd
from scipy.special import logsumexp
from sklearn.ensemble import GradientBoostingClassifier

from mtbart.core import (ATE, ATT, Dataset, EstimandSpec, GpsMatrix, design_matrix,
                         require_populated_arms)
from mtbart.errors import ConvergenceError, PositivityError, SeparationError
from mtbart.weighting import iptw_weights

SEPARATION_PROBABILITY = 1e-12


@dataclass(frozen=True)
class MlrModel:
    """
    Multinomial logit with the last treatment as reference. Row k of
    coefficients holds (intercept, slopes) of treatment k+1.
    """
    coefficients: np.ndarray
    ridge_penalty: float
    column_names: Tuple[str, ...]
    n_iterations: int = 0
    trace: tuple = ()

    @property
    def n_treatments(self) -> int:
        return self.coefficients.shape[0] + 1


def _with_intercept(design):
    return np.column_stack([np.ones(len(design)), design])


def mlr_probabilities(coefficients, design) -> np.ndarray:
    """
    Softmax over the linear predictors and the reference category's 0.
    """
    scores = _with_intercept(design) @ np.asarray(coefficients).T
    scores = np.column_stack([scores, np.zeros(len(scores))])
    return np.exp(scores - logsumexp(scores, axis=1, keepdims=True))


def _penalized_loglik(coefficients, design1, onehot, ridge_penalty):
    scores = np.column_stack([design1 @ coefficients.T, np.zeros(len(design1))])
    loglik = np.sum(onehot * scores) - np.sum(logsumexp(scores, axis=1))
    return loglik - 0.5 * ridge_penalty * np.sum(coefficients[:, 1:] ** 2)


def fit_mlr(dataset: Dataset, ridge_penalty=1e-6, max_steps=100, tolerance=1e-6) -> MlrModel:
    """
    Fit the multinomial logit by Newton-Raphson with step halving.
    The intercepts are not penalized.
    """
    if ridge_penalty < 0:
        raise ValueError("Ridge penalty must be nonnegative")
    design, names = design_matrix(dataset)
    design1 = _with_intercept(design)
    n_units, n_params = design1.shape
    n_classes = dataset.n_treatments - 1
    onehot_full = np.eye(dataset.n_treatments)[dataset.treatment - 1]
    onehot = onehot_full[:, :-1]

    penalty = np.full(n_params, ridge_penalty)
    penalty[0] = 0.0
    penalty = np.tile(penalty, n_classes)

    coefficients = np.zeros((n_classes, n_params))
    # start the intercepts at the log class-frequency ratios
    frequencies = np.maximum(onehot_full.mean(axis=0), 1.0 / n_units)
    coefficients[:, 0] = np.log(frequencies[:-1] / frequencies[-1])

    started = time.monotonic()
    trace = []
    loglik = _penalized_loglik(coefficients, design1, onehot_full, ridge_penalty)
    for step in range(max_steps + 1):
        probabilities = mlr_probabilities(coefficients, design)
        residual = onehot - probabilities[:, :-1]
        gradient = (residual.T @ design1).ravel() - penalty * coefficients.ravel()
        gradient_norm = float(np.linalg.norm(gradient))
        trace.append({"step": step, "loglik": float(loglik), "gradient_norm": gradient_norm})
        logging.debug("MLR step %s: loglik %.6f, gradient norm %.3g", step, loglik, gradient_norm)

        if ridge_penalty == 0 and probabilities.min() < SEPARATION_PROBABILITY:
            raise SeparationError("Quasi-separation in the multinomial logistic model: "
                                  "a fitted probability is below 1e-12. "
                                  "Use a ridge penalty greater than 0.")
        if gradient_norm < tolerance:
            break
        if step == max_steps:
            raise ConvergenceError(f"Multinomial logistic fit did not converge in "
                                   f"{max_steps} Newton steps", trace)

        # information matrix, block (k, l) = X' diag(p_k (delta_kl - p_l)) X
        information = np.zeros((n_classes * n_params, n_classes * n_params))
        p = probabilities[:, :-1]
        for k in range(n_classes):
            for l in range(k, n_classes):
                factor = p[:, k] * ((k == l) - p[:, l])
                block = design1.T @ (design1 * factor[:, None])
                information[k * n_params:(k + 1) * n_params, l * n_params:(l + 1) * n_params] = block
                information[l * n_params:(l + 1) * n_params, k * n_params:(k + 1) * n_params] = block.T
        information[np.diag_indices_from(information)] += penalty
        try:
            direction = np.linalg.solve(information, gradient).reshape(n_classes, n_params)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("Singular information matrix in the multinomial logistic "
                                   "fit; use a ridge penalty greater than 0", trace) from exc

        step_size = 1.0
        while True:
            candidate = coefficients + step_size * direction
            candidate_loglik = _penalized_loglik(candidate, design1, onehot_full, ridge_penalty)
            if candidate_loglik >= loglik - 1e-12 * abs(loglik) or step_size < 1e-10:
                break
            step_size /= 2.0
        coefficients, loglik = candidate, candidate_loglik

    if not np.all(np.isfinite(coefficients)):
        raise ConvergenceError("Multinomial logistic fit produced non-finite coefficients", trace)

    logging.info("MLR GPS model fit in %s Newton steps (%s)", len(trace) - 1,
                 humanize.naturaldelta(time.monotonic() - started))
    return MlrModel(coefficients=coefficients, ridge_penalty=float(ridge_penalty),
                    column_names=names, n_iterations=len(trace) - 1, trace=tuple(trace))


def _check_columns(expected, dataset):
    design, names = design_matrix(dataset)
    if tuple(names) != tuple(expected):
        raise ValueError(f"Covariate columns {names} do not match the model's {expected}")
    return design


def predict_mlr(model: MlrModel, dataset: Dataset) -> GpsMatrix:
    design = _check_columns(model.column_names, dataset)
    return GpsMatrix.from_probabilities(mlr_probabilities(model.coefficients, design))


@dataclass(frozen=True)
class BalanceTable:
    """
    Weighted standardized mean differences, one row per (covariate, w, w') entry.
    Entries with zero pooled SD and different means are non-finite and are left
    out of max_abs.
    """
    entries: pd.DataFrame

    @property
    def max_abs(self) -> float:
        values = self.entries["std_bias"].to_numpy(float)
        values = np.abs(values[np.isfinite(values)])
        return float(values.max()) if len(values) else 0.0

    @property
    def flagged(self) -> pd.DataFrame:
        return self.entries[~np.isfinite(self.entries["std_bias"].to_numpy(float))]

    def to_frame(self) -> pd.DataFrame:
        return self.entries.copy()


def _weighted_means(design, weights, members):
    group_weights = weights[members]
    total = group_weights.sum()
    if total <= 0:
        raise PositivityError("All weights in a treatment group are zero")
    return group_weights @ design[members] / total


def _pooled_sd(design, first, second):
    if design.shape[1] == 0:
        return np.zeros(0)
    var_first = np.var(design[first], axis=0, ddof=1) if first.sum() > 1 else 0.0
    var_second = np.var(design[second], axis=0, ddof=1) if second.sum() > 1 else 0.0
    return np.sqrt((var_first + var_second) / 2.0)


def _bias(mean_difference, pooled_sd):
    with np.errstate(divide="ignore", invalid="ignore"):
        bias = mean_difference / pooled_sd
    zero_sd = pooled_sd == 0
    bias[zero_sd] = np.where(mean_difference[zero_sd] == 0, 0.0,
                             np.copysign(np.inf, mean_difference[zero_sd]))
    return bias


def standardized_bias(dataset: Dataset, weights, pair) -> BalanceTable:
    """
    (weighted mean in group w - weighted mean in group w') / pooled unweighted SD,
    for every column of the expanded design matrix.
    """
    weights = np.asarray(getattr(weights, "weights", weights), dtype=float)
    if np.any(weights < 0):
        raise ValueError("Balance weights must be nonnegative")
    w, w_other = pair
    design, names = design_matrix(dataset)
    first = dataset.treatment == w
    second = dataset.treatment == w_other
    difference = _weighted_means(design, weights, first) - _weighted_means(design, weights, second)
    bias = _bias(difference, _pooled_sd(design, first, second))
    return BalanceTable(pd.DataFrame({"covariate": list(names), "w": w, "w_other": w_other,
                                      "std_bias": bias}))


def balance_pairs(estimand: EstimandSpec):
    """
    ATE: every pair of treatments in s1 and s2; ATT: the reference against each comparison arm.
    """
    if estimand.kind == ATT:
        return [(estimand.reference, w) for w in estimand.s2]
    arms = estimand.arms
    return [(a, b) for i, a in enumerate(arms) for b in arms[i + 1:]]


def balance_table(dataset: Dataset, weights, estimand: EstimandSpec) -> BalanceTable:
    tables = [standardized_bias(dataset, weights, pair).entries
              for pair in balance_pairs(estimand)]
    return BalanceTable(pd.concat(tables, ignore_index=True))


class _BalanceEvaluator:
    """
    max_abs of the balance table for a given GPS, with the design matrix and
    pooled SDs computed once from the raw data.
    """
    def __init__(self, dataset: Dataset, estimand: EstimandSpec):
        self.dataset = dataset
        self.estimand = estimand
        self.design, _ = design_matrix(dataset)
        self.pairs = []
        for w, w_other in balance_pairs(estimand):
            first = dataset.treatment == w
            second = dataset.treatment == w_other
            self.pairs.append((first, second, _pooled_sd(self.design, first, second)))

    def max_abs(self, gps: GpsMatrix) -> float:
        weights = iptw_weights(gps, self.dataset.treatment, self.estimand).weights
        worst = 0.0
        for first, second, pooled_sd in self.pairs:
            difference = (_weighted_means(self.design, weights, first)
                          - _weighted_means(self.design, weights, second))
            bias = np.abs(_bias(difference, pooled_sd))
            bias = bias[np.isfinite(bias)]
            if len(bias):
                worst = max(worst, float(bias.max()))
        return worst


@dataclass
class GbmModel:
    """
    A multinomial boosting fit together with its balance path. Predictions use
    the first selected_iteration rounds only.
    """
    booster: GradientBoostingClassifier
    shrinkage: float
    max_depth: int
    n_iterations_fit: int
    selected_iteration: int
    class_frequencies: np.ndarray
    column_names: Tuple[str, ...]
    balance_path: pd.DataFrame = field(default_factory=pd.DataFrame)


def _staged_probabilities(booster, design, iteration, class_frequencies):
    if iteration == 0:
        return np.tile(class_frequencies, (len(design), 1))
    return next(islice(booster.staged_predict_proba(design), iteration - 1, None))


def fit_gbm(dataset: Dataset, estimand: Optional[EstimandSpec] = None, shrinkage=0.01,
            max_depth=3, max_iterations=10000, eval_stride=100, seed=0,
            min_samples_leaf=10) -> GbmModel:
    """
    Fit multinomial gradient boosting for max_iterations rounds and select the
    evaluated round whose IPTW weights minimize the maximum absolute
    standardized bias. Without an estimand, ATE weights over all treatments are used.
    """
    if max_iterations < eval_stride:
        raise ValueError(f"max_iterations ({max_iterations}) must be at least "
                         f"eval_stride ({eval_stride})")
    if not 0 < shrinkage <= 1:
        raise ValueError("Shrinkage must be in (0, 1]")
    if max_depth < 1 or eval_stride < 1:
        raise ValueError("max_depth and eval_stride must be positive")
    if estimand is None:
        estimand = EstimandSpec(ATE, (1,), tuple(range(2, dataset.n_treatments + 1)))

    require_populated_arms(dataset)
    design, names = design_matrix(dataset)
    started = time.monotonic()
    booster = GradientBoostingClassifier(loss="log_loss", learning_rate=shrinkage,
                                         n_estimators=max_iterations, max_depth=max_depth,
                                         subsample=1.0, min_samples_leaf=min_samples_leaf,
                                         random_state=seed)
    booster.fit(design, dataset.treatment)
    class_frequencies = dataset.group_sizes() / dataset.n_units

    evaluator = _BalanceEvaluator(dataset, estimand)
    path = [(0, evaluator.max_abs(GpsMatrix.from_probabilities(
        _staged_probabilities(booster, design, 0, class_frequencies))))]
    for iteration, probabilities in enumerate(booster.staged_predict_proba(design), start=1):
        if iteration % eval_stride == 0:
            path.append((iteration, evaluator.max_abs(GpsMatrix.from_probabilities(probabilities))))
    balance_path = pd.DataFrame(path, columns=["iteration", "max_abs"])
    # argmin keeps the first minimum, so ties go to the earliest round
    selected = int(balance_path["iteration"].iloc[int(balance_path["max_abs"].to_numpy().argmin())])

    logging.info("GBM GPS model: %s rounds in %s, selected round %s (max |std bias| %.4f)",
                 humanize.intcomma(max_iterations),
                 humanize.naturaldelta(time.monotonic() - started), selected,
                 balance_path["max_abs"].min())
    return GbmModel(booster=booster, shrinkage=shrinkage, max_depth=max_depth,
                    n_iterations_fit=max_iterations, selected_iteration=selected,
                    class_frequencies=class_frequencies, column_names=names,
                    balance_path=balance_path)


def predict_gbm(model: GbmModel, dataset: Dataset, iteration: Optional[int] = None) -> GpsMatrix:
    """
    GPS from the first `iteration` boosting rounds (selected_iteration by default).
    """
    design = _check_columns(model.column_names, dataset)
    iteration = model.selected_iteration if iteration is None else iteration
    if not 0 <= iteration <= model.n_iterations_fit:
        raise ValueError(f"Iteration {iteration} outside 0..{model.n_iterations_fit}")
    probabilities = _staged_probabilities(model.booster, design, iteration,
                                          model.class_frequencies)
    return GpsMatrix.from_probabilities(probabilities)


def gbm_balance_path(model: GbmModel) -> pd.DataFrame:
    return model.balance_path.copy()


@dataclass(frozen=True)
class SupportRegion:
    """
    Per-treatment GPS interval [low_w, high_w] and the units inside all of them.
    """
    low: np.ndarray
    high: np.ndarray
    retained: np.ndarray
    empty_intervals: Tuple[int, ...] = ()

    @property
    def is_empty(self) -> bool:
        return len(self.retained) == 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"arm": np.arange(1, len(self.low) + 1), "low": self.low,
                             "high": self.high,
                             "empty": [w in self.empty_intervals
                                       for w in range(1, len(self.low) + 1)]})


def rectangular_support(gps: GpsMatrix, treatment, eligible=None) -> SupportRegion:
    """
    low_w is the largest per-group minimum of r(w, X) and high_w the smallest
    per-group maximum; a unit is retained when r(w, X_i) is in [low_w, high_w]
    for every w.
    """
    treatment = np.asarray(treatment)
    if gps.n_units != len(treatment):
        raise ValueError("GPS rows and treatment length differ")
    groups = [treatment == w for w in range(1, gps.n_treatments + 1) if np.any(treatment == w)]
    if len(groups) < 2:
        raise ValueError("Common support needs at least two observed treatment groups")
    low = np.max([gps.values[members].min(axis=0) for members in groups], axis=0)
    high = np.min([gps.values[members].max(axis=0) for members in groups], axis=0)
    inside = np.all((gps.values >= low) & (gps.values <= high), axis=1)
    if eligible is not None:
        mask = np.zeros(len(treatment), dtype=bool)
        mask[np.asarray(eligible)] = True
        inside &= mask
    empty = tuple(int(w) + 1 for w in np.flatnonzero(low > high))
    if empty:
        logging.warning("Rectangular common support is empty for treatments %s", empty)
    return SupportRegion(low=low, high=high, retained=np.flatnonzero(inside),
                         empty_intervals=empty)
