"""
Inverse probability of treatment weighting (IPTW): weights for ATE and ATT
estimands, quantile trimming, the normalized weighted risk difference and the
nonparametric bootstrap used for its confidence interval.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from mtbart.core import ATE, ATT, Dataset, EstimandSpec, GpsMatrix
from mtbart.errors import EstimationError, PositivityError
from mtbart.utils.seeding import substream

MAX_RESAMPLE_FAILURE_RATE = 0.10


@dataclass(frozen=True)
class WeightVector:
    """
    One nonnegative weight per unit for a given estimand. Units outside the
    estimand's treatment sets have weight 0.
    """
    weights: np.ndarray
    estimand: EstimandSpec
    treatment: np.ndarray
    trimmed: bool = False
    quantiles: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float, copy=True)
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValueError("Weights must be finite and nonnegative")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        treatment = np.array(self.treatment, dtype=np.int64, copy=True)
        treatment.setflags(write=False)
        object.__setattr__(self, "treatment", treatment)

    def scaled(self, factor) -> "WeightVector":
        return WeightVector(self.weights * factor, self.estimand, self.treatment,
                            self.trimmed, self.quantiles)

    def adjustable(self) -> np.ndarray:
        """
        Mask of the weights trimming may change: every nonzero weight, except
        the reference group of an ATT, whose weights stay at 1.
        """
        mask = self.weights > 0
        if self.estimand.kind == ATT:
            mask &= ~np.isin(self.treatment, self.estimand.s1)
        return mask


def iptw_weights(gps: GpsMatrix, treatment, estimand: EstimandSpec) -> WeightVector:
    """
    ATE: 1 / r(W_i, X_i) for units in s1 or s2.
    ATT with reference t: 1 for units with W_i = t, r(t, X_i) / r(W_i, X_i) for units in s2.
    """
    treatment = np.asarray(treatment)
    estimand.check_levels(gps.n_treatments)
    observed = gps.observed(treatment)
    weights = np.zeros(len(treatment))

    if estimand.kind == ATE:
        members = np.isin(treatment, estimand.arms)
        if np.any(observed[members] <= 0):
            raise PositivityError("positivity violation: r(W, X) = 0 for a unit in "
                                  f"{estimand.label()}")
        weights[members] = 1.0 / observed[members]
    else:
        reference = estimand.reference
        weights[treatment == reference] = 1.0
        comparison = np.isin(treatment, estimand.s2)
        if np.any(observed[comparison] <= 0):
            raise PositivityError("positivity violation: r(W, X) = 0 for a comparison unit in "
                                  f"{estimand.label()}")
        weights[comparison] = gps.column(reference)[comparison] / observed[comparison]
    return WeightVector(weights, estimand, treatment)


def trim_weights(weights: WeightVector, lower_q=0.05, upper_q=0.95,
                 per_group=False) -> WeightVector:
    """
    Cap the adjustable weights at their lower_q and upper_q quantiles.
    The quantiles are taken over the nonzero adjustable weights, or within each
    treatment group when per_group is set.
    """
    if not 0 < lower_q < upper_q < 1:
        raise ValueError(f"Trimming quantiles must satisfy 0 < lower < upper < 1, "
                         f"got {lower_q} and {upper_q}")
    values = weights.weights.copy()
    mask = weights.adjustable()
    if per_group:
        masks = [mask & (weights.treatment == w) for w in np.unique(weights.treatment[mask])]
    else:
        masks = [mask]
    for group in masks:
        if not np.any(group):
            continue
        # inverted_cdf returns observed values, so trimming twice equals trimming once
        low, high = np.quantile(values[group], [lower_q, upper_q], method="inverted_cdf")
        values[group] = np.clip(values[group], low, high)
    return WeightVector(values, weights.estimand, weights.treatment, True, (lower_q, upper_q))


def _weighted_arm_mean(outcome, weights, members):
    total = weights[members].sum()
    if total <= 0:
        raise EstimationError("zero weight sum in a treatment group")
    return float(np.dot(weights[members], outcome[members]) / total)


def iptw_estimate(dataset: Dataset, weights: WeightVector) -> float:
    """
    Risk difference between the weighted outcome means of s1 and s2. With
    several treatments in a set, each treatment's normalized mean counts 1/|s|.
    """
    if dataset.outcome is None:
        raise ValueError("iptw_estimate needs an outcome")
    if len(weights.weights) != dataset.n_units:
        raise ValueError("Weights are not aligned with the dataset")
    outcome = dataset.outcome.astype(float)
    means = {}
    for w in weights.estimand.arms:
        means[w] = _weighted_arm_mean(outcome, weights.weights, dataset.treatment == w)
    first = np.mean([means[w] for w in weights.estimand.s1])
    second = np.mean([means[w] for w in weights.estimand.s2])
    return float(first - second)


def _resample(dataset: Dataset, rng):
    """
    Draw a unit-level resample that still contains every treatment group.
    """
    indices = rng.integers(0, dataset.n_units, size=dataset.n_units)
    resampled = dataset.subset(indices)
    if np.any(resampled.group_sizes() == 0):
        raise EstimationError("resample lost a treatment group")
    return resampled


class _FailureBudget:
    """
    Failed resample attempts shared by all replicates of one bootstrap run.
    """
    def __init__(self, limit):
        self.limit = limit
        self.count = 0
        self._lock = threading.Lock()

    def spend(self) -> bool:
        with self._lock:
            self.count += 1
            return self.count <= self.limit

    @property
    def exhausted(self) -> bool:
        with self._lock:
            return self.count > self.limit


def bootstrap_replicates(dataset: Dataset, estimator: Callable, n_replicates: int,
                         seed, threads=1) -> np.ndarray:
    """
    Apply the estimator to n_replicates resamples. A failed resample is redrawn
    from the next substream; once the failed attempts of all replicates exceed
    10% of n_replicates the run stops with EstimationError.
    Returns one row per replicate (the estimator may return a vector).
    """
    budget = _FailureBudget(int(np.floor(MAX_RESAMPLE_FAILURE_RATE * n_replicates)))

    def run(replicate):
        attempt = 0
        while not budget.exhausted:
            rng = substream(seed, replicate, attempt)
            attempt += 1
            try:
                value = estimator(_resample(dataset, rng))
                return np.atleast_1d(np.asarray(value, dtype=float))
            except (EstimationError, ValueError, np.linalg.LinAlgError) as exc:
                logging.debug("Bootstrap resample %s attempt %s failed: %s",
                              replicate, attempt, exc)
                if not budget.spend():
                    break
        return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(run, range(n_replicates)))
    else:
        results = []
        for replicate in range(n_replicates):
            results.append(run(replicate))
            if results[-1] is None:
                break

    if budget.exhausted or any(value is None for value in results):
        raise EstimationError(f"{budget.count} failed resample attempts for {n_replicates} "
                              f"bootstrap replicates (at most {budget.limit} allowed)")
    if budget.count:
        logging.info("Bootstrap: %s failed resamples were redrawn", budget.count)
    return np.vstack(results)


def percentile_interval(values, level=0.95):
    """
    Equal-tailed percentile interval along the first axis.
    """
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(values, [alpha, 1.0 - alpha], axis=0)
    return low, high


def bootstrap_ci(dataset: Dataset, estimator: Callable, n_replicates=1000, seed=0,
                 level=0.95, threads=1):
    """
    Percentile bootstrap interval. The estimator gets a resampled Dataset and
    must refit whatever model it needs (the GPS in particular) on it.
    """
    if n_replicates < 100:
        raise ValueError("The bootstrap needs at least 100 resamples")
    if not 0 < level < 1:
        raise ValueError("Interval level must be between 0 and 1")
    replicates = bootstrap_replicates(dataset, estimator, n_replicates, seed, threads)
    low, high = percentile_interval(replicates, level)
    if replicates.shape[1] == 1:
        return float(low[0]), float(high[0])
    return low, high
