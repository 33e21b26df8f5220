"""
Small dataset builders shared by the tests.
"""

import numpy as np

from mtbart.core import CATEGORICAL, CONTINUOUS, ColumnMeta, Dataset


def make_dataset(covariates, treatment, outcome=None, categorical=None, n_treatments=0):
    """
    Build a Dataset from plain arrays. categorical maps a column index to its
    number of levels; every other column is continuous.
    """
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    categorical = categorical or {}
    meta = tuple(ColumnMeta(f"x{j + 1}", CATEGORICAL, categorical[j]) if j in categorical
                 else ColumnMeta(f"x{j + 1}", CONTINUOUS)
                 for j in range(covariates.shape[1]))
    return Dataset(covariates=covariates, column_meta=meta, treatment=np.asarray(treatment),
                   outcome=None if outcome is None else np.asarray(outcome),
                   n_treatments=n_treatments)


def confounded_dataset(n=600, seed=0, n_treatments=3):
    """
    One continuous confounder shifting both the treatment and the outcome,
    plus one three-level categorical covariate.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    category = rng.integers(0, 3, size=n)
    scores = np.column_stack([0.8 * x * (w - 2) for w in range(1, n_treatments + 1)])
    probabilities = np.exp(scores) / np.exp(scores).sum(axis=1, keepdims=True)
    treatment = (rng.random(n)[:, None] > np.cumsum(probabilities, axis=1)).sum(axis=1) + 1
    treatment[:n_treatments] = np.arange(1, n_treatments + 1)
    risk = 1.0 / (1.0 + np.exp(-(0.5 * x + 0.3 * (treatment == 2) - 0.2 * category)))
    outcome = (rng.random(n) < risk).astype(int)
    return make_dataset(np.column_stack([x, category]), treatment, outcome,
                        categorical={1: 3}, n_treatments=n_treatments)


def small_sim1_document(n=300, intercepts=(0.0, 0.0), tau=(-0.8, -0.5, -0.6)):
    """
    A three-covariate Sim1 scenario that is cheap to generate and fit.
    """
    return {
        "name": "small", "kind": "sim1", "scenario": "I", "n": n, "ratio": [1, 1, 1],
        "layout": {"n_continuous": 2, "n_categorical": 1, "n_levels": 3},
        "terms": [{"kind": "square", "columns": ["X1"]},
                  {"kind": "product", "columns": ["X2", "X3"], "level": 1}],
        "treatment": {
            "intercepts": None if intercepts is None else list(intercepts),
            "linear": [{"X1": 0.5, "X2": -0.3, "X3": [0.2, -0.1]},
                       {"X1": -0.4, "X2": 0.2, "X3": [0.1, 0.1]}],
            "nonlinear": [[0.2, 0.1], [-0.1, 0.2]],
        },
        "outcome": {
            "tau": None if tau is None else list(tau),
            "gamma_linear": {"X1": 0.4, "X2": -0.3, "X3": [0.2, 0.1]},
            "gamma_nonlinear": [0.2, 0.3],
        },
    }
