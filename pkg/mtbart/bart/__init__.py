"""
Probit Bayesian additive regression trees for causal effects of several treatments.
"""

from mtbart.bart.cv import cv_errors, select_k_cv
from mtbart.bart.posterior import (DiscardResult, PosteriorPredictions, bart_discard,
                                   bart_effect, predict_counterfactuals)
from mtbart.bart.sampler import BartConfig, BartFit, fit_probit_bart

__all__ = ["BartConfig", "BartFit", "DiscardResult", "PosteriorPredictions", "bart_discard",
           "bart_effect", "cv_errors", "fit_probit_bart", "predict_counterfactuals",
           "select_k_cv"]
