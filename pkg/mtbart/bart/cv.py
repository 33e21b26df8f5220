"""
Choice of the leaf-prior hyperparameter k by stratified K-fold cross-validation
of the misclassification error.
"""

import logging

import numpy as np
import pandas as pd
from sklearn.model_selection import StratifiedKFold

from mtbart.bart.posterior import predict_counterfactuals
from mtbart.bart.sampler import BartConfig, fit_probit_bart, with_k
from mtbart.core import Dataset
from mtbart.utils.seeding import substream_seed


def cv_errors(dataset: Dataset, k_grid, folds=5, seed=0,
              config: BartConfig = BartConfig()) -> pd.DataFrame:
    """
    Mean out-of-fold misclassification (posterior mean of f at the observed
    treatment, thresholded at 0.5) for every k.
    """
    if dataset.outcome is None:
        raise ValueError("Cross-validation needs an outcome")
    k_grid = sorted(float(k) for k in k_grid)
    if not k_grid:
        raise ValueError("k grid must not be empty")
    smallest_class = np.bincount(dataset.outcome, minlength=2).min()
    if smallest_class < folds:
        raise ValueError(f"Stratified {folds}-fold cross-validation needs at least {folds} "
                         f"units of each outcome class, got {smallest_class}")

    splitter = StratifiedKFold(n_splits=folds, shuffle=True,
                               random_state=substream_seed(seed, "cv"))
    splits = list(splitter.split(np.zeros(dataset.n_units), dataset.outcome))
    rows = []
    for k in k_grid:
        errors = []
        for fold, (train, test) in enumerate(splits):
            fit = fit_probit_bart(dataset.subset(train), with_k(config, k),
                                  seed=substream_seed(seed, "cv", fold))
            held_out = dataset.subset(test)
            mean = predict_counterfactuals(fit, held_out).mean()
            observed = mean[np.arange(len(test)), held_out.treatment - 1]
            errors.append(float(np.mean((observed > 0.5) != (held_out.outcome == 1))))
        rows.append({"k": k, "error": float(np.mean(errors)),
                     "se": float(np.std(errors, ddof=1) / np.sqrt(folds))})
        logging.info("BART cross-validation k=%s: misclassification %.4f", k, rows[-1]["error"])
    return pd.DataFrame(rows)


def select_k_cv(dataset: Dataset, k_grid, folds=5, seed=0,
                config: BartConfig = BartConfig()) -> float:
    """
    The k with the lowest cross-validated misclassification; ties go to the smaller k.
    """
    k_grid = sorted(set(float(k) for k in k_grid))
    if len(k_grid) == 1:
        return k_grid[0]
    table = cv_errors(dataset, k_grid, folds, seed, config)
    return float(table["k"].iloc[int(table["error"].to_numpy().argmin())])
