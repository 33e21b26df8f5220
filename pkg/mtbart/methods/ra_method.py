"""
This file contains the RegressionAdjustmentMethod class, which estimates
effects from a main-effects Bayesian logistic outcome model.
"""
import logging

from mtbart.method_options import MethodOptions
from mtbart.ra import fit_bayes_logit, ra_effect


class RegressionAdjustmentMethod:
    """
    The RegressionAdjustmentMethod class imputes potential outcomes from
    posterior coefficient draws. One model fit is shared by all estimands.
    """
    name = "ra"

    def __init__(self, options: MethodOptions = None):
        self.options = options or MethodOptions()
        logging.debug("RegressionAdjustmentMethod initialized with prior_scale: %s, draws: %s",
                      self.options.prior_scale, self.options.draws)

    def supports(self, estimand):
        return True

    def estimate(self, dataset, estimands, seed):
        model = fit_bayes_logit(dataset, prior_scale=self.options.prior_scale,
                                per_arm=self.options.per_arm)
        return [ra_effect(model, dataset, estimand, n_draws=self.options.draws, seed=seed,
                          method_id=self.name)
                for estimand in estimands]
