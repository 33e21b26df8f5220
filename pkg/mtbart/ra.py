"""
Regression adjustment: a Bayesian logistic outcome model with main effects of
the treatment and of every covariate, whose posterior draws impute the
potential outcome probabilities of every unit under every treatment.

The posterior is the Laplace approximation at the MAP: Normal(MAP, inverse of
the negative Hessian of the log posterior).
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import expit

from mtbart.core import (POSTERIOR_CREDIBLE, Dataset, EffectEstimate, EstimandSpec, design_matrix,
                         require_populated_arms)
from mtbart.errors import ConvergenceError, EstimationError
from mtbart.utils.seeding import substream

INTERCEPT_PRIOR_SCALE = 10.0
DRAW_CHUNK = 100


@dataclass(frozen=True)
class BayesLogitModel:
    """
    Coefficients are ordered (intercept, treatment dummies 2..Z, covariates).
    Continuous covariates are standardized with center and scale; the arm
    field is set when the model was fit on one treatment group only.
    """
    map_coefficients: np.ndarray
    posterior_covariance: np.ndarray
    prior_scale: float
    column_names: Tuple[str, ...]
    center: np.ndarray
    scale: np.ndarray
    n_treatments: int
    arm: Optional[int] = None

    def design(self, dataset: Dataset, arm) -> np.ndarray:
        covariates, names = design_matrix(dataset)
        if tuple(names) != self.column_names:
            raise ValueError(f"Covariate columns {names} do not match the model's "
                             f"{self.column_names}")
        covariates = (covariates - self.center) / self.scale
        columns = [np.ones((dataset.n_units, 1))]
        if self.arm is None:
            dummies = np.zeros((dataset.n_units, self.n_treatments - 1))
            if arm > 1:
                dummies[:, arm - 2] = 1.0
            columns.append(dummies)
        columns.append(covariates)
        return np.hstack(columns)


@dataclass(frozen=True)
class PerArmLogitModel:
    models: Dict[int, BayesLogitModel]


def _standardization(dataset: Dataset):
    covariates, names = design_matrix(dataset)
    center = np.zeros(covariates.shape[1])
    scale = np.ones(covariates.shape[1])
    position = 0
    for meta in dataset.column_meta:
        if meta.is_categorical:
            position += meta.levels - 1
            continue
        sd = covariates[:, position].std()
        center[position] = covariates[:, position].mean()
        scale[position] = sd if sd > 0 else 1.0
        position += 1
    return names, center, scale


def _map_fit(design, outcome, prior_precision, max_steps=100, tolerance=1e-8):
    coefficients = np.zeros(design.shape[1])
    log_posterior = -np.inf
    trace = []
    for step in range(max_steps):
        eta = design @ coefficients
        probabilities = expit(eta)
        gradient = design.T @ (outcome - probabilities) - prior_precision * coefficients
        weights = probabilities * (1.0 - probabilities)
        information = design.T @ (design * weights[:, None]) + np.diag(prior_precision)
        gradient_norm = float(np.linalg.norm(gradient))
        log_posterior = float(np.sum(outcome * eta - np.logaddexp(0.0, eta))
                              - 0.5 * np.sum(prior_precision * coefficients ** 2))
        trace.append({"step": step, "log_posterior": log_posterior, "gradient_norm": gradient_norm})
        if gradient_norm < tolerance:
            return coefficients, information, trace
        direction = np.linalg.solve(information, gradient)
        step_size = 1.0
        while step_size > 1e-10:
            candidate = coefficients + step_size * direction
            eta = design @ candidate
            value = (np.sum(outcome * eta - np.logaddexp(0.0, eta))
                     - 0.5 * np.sum(prior_precision * candidate ** 2))
            if value >= log_posterior - 1e-12 * abs(log_posterior):
                break
            step_size /= 2.0
        coefficients = candidate
    raise ConvergenceError(f"Bayesian logistic regression did not converge in {max_steps} "
                           f"Newton steps", trace)


def _fit_one(dataset: Dataset, prior_scale, arm=None) -> BayesLogitModel:
    names, center, scale = _standardization(dataset)
    template = BayesLogitModel(np.zeros(0), np.zeros((0, 0)), prior_scale, tuple(names),
                               center, scale, dataset.n_treatments, arm)
    if arm is None:
        blocks = [template.design(dataset.subset(dataset.group(w)), w) for w in dataset.arms]
        order = np.concatenate([dataset.group(w) for w in dataset.arms])
        design = np.vstack(blocks)
        outcome = dataset.outcome[order].astype(float)
    else:
        members = dataset.group(arm)
        design = template.design(dataset.subset(members), arm)
        outcome = dataset.outcome[members].astype(float)

    prior_precision = np.full(design.shape[1], 1.0 / prior_scale ** 2)
    prior_precision[0] = 1.0 / INTERCEPT_PRIOR_SCALE ** 2
    coefficients, information, _ = _map_fit(design, outcome, prior_precision)
    try:
        np.linalg.cholesky(information)
        covariance = np.linalg.inv(information)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("The negative Hessian at the MAP is not positive definite; "
                              "try a larger prior_scale") from exc
    covariance = (covariance + covariance.T) / 2.0
    return BayesLogitModel(coefficients, covariance, prior_scale, tuple(names), center, scale,
                           dataset.n_treatments, arm)


def fit_bayes_logit(dataset: Dataset, prior_scale=2.5, per_arm=False):
    """
    MAP and Laplace covariance of the main-effects logistic outcome model under
    Normal(0, prior_scale^2) priors (Normal(0, 10^2) for the intercept).
    With per_arm, one covariate-only model is fit within each treatment group.
    """
    if dataset.outcome is None:
        raise ValueError("Regression adjustment needs an outcome")
    if prior_scale <= 0:
        raise ValueError("prior_scale must be positive")
    require_populated_arms(dataset)
    if per_arm:
        model = PerArmLogitModel({w: _fit_one(dataset, prior_scale, arm=w) for w in dataset.arms})
    else:
        model = _fit_one(dataset, prior_scale)
    logging.info("Bayesian logistic outcome model fit (%s)",
                 "per arm" if per_arm else "pooled with treatment dummies")
    return model


def arm_mean_draws(model, dataset: Dataset, units, n_draws=1000, seed=0) -> np.ndarray:
    """
    Per posterior draw and arm, the mean imputed probability over the given units.
    Returns an n_draws x Z array.
    """
    units = np.asarray(units, dtype=np.int64)
    subset = dataset.subset(units)
    rng = substream(seed, "ra")
    models = model.models if isinstance(model, PerArmLogitModel) else \
        {w: model for w in dataset.arms}
    means = np.empty((n_draws, dataset.n_treatments))
    coefficient_draws = {}
    for w in dataset.arms:
        fitted = models[w]
        # one set of draws per distinct model
        key = id(fitted)
        if key not in coefficient_draws:
            coefficient_draws[key] = rng.multivariate_normal(
                fitted.map_coefficients, fitted.posterior_covariance, size=n_draws,
                method="cholesky" if np.any(fitted.posterior_covariance) else "svd")
        draws = coefficient_draws[key]
        design = fitted.design(subset, w)
        for start in range(0, n_draws, DRAW_CHUNK):
            chunk = draws[start:start + DRAW_CHUNK]
            means[start:start + DRAW_CHUNK, w - 1] = expit(design @ chunk.T).mean(axis=0)
    return means


def effect_from_arm_means(arm_means, estimand: EstimandSpec, n_used, n_discarded=0,
                          method_id="ra", level=0.95) -> EffectEstimate:
    first = arm_means[:, [w - 1 for w in estimand.s1]].mean(axis=1)
    second = arm_means[:, [w - 1 for w in estimand.s2]].mean(axis=1)
    values = first - second
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(values, [alpha, 1.0 - alpha])
    return EffectEstimate(estimand=estimand, point=float(values.mean()), ci_lower=float(low),
                          ci_upper=float(high), interval_kind=POSTERIOR_CREDIBLE,
                          method_id=method_id, n_used=int(n_used), n_discarded=n_discarded)


def ra_effect(model, dataset: Dataset, estimand: EstimandSpec, n_draws=1000, seed=0,
              method_id="ra") -> EffectEstimate:
    """
    Average the imputed contrasts over the reference group (ATT) or all units (ATE).
    """
    estimand.check_levels(dataset.n_treatments)
    units = estimand.eligible(dataset.treatment)
    arm_means = arm_mean_draws(model, dataset, units, n_draws, seed)
    return effect_from_arm_means(arm_means, estimand, len(units), method_id=method_id)
