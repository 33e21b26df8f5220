"""
This file contains the BartMethod class, which estimates effects from the
counterfactual predictions of one probit BART fit, optionally discarding
units whose counterfactual predictions are too uncertain.
"""
import logging

from mtbart.bart import BartConfig, bart_discard, bart_effect, fit_probit_bart, \
    predict_counterfactuals
from mtbart.method_options import MethodOptions


class BartMethod:
    """
    The BartMethod class. Intervals are posterior credible intervals.
    """
    def __init__(self, discard=False, options: MethodOptions = None, threads=1):
        self.discard = discard
        self.options = options or MethodOptions()
        self.threads = threads
        self.name = "bart-discard" if discard else "bart"
        self.config = BartConfig(n_trees=self.options.trees,
                                 total_iterations=self.options.iterations,
                                 burn_in=self.options.burn_in, k=self.options.k)
        logging.debug("BartMethod %s initialized with %s trees, %s iterations",
                      self.name, self.config.n_trees, self.config.total_iterations)

    def supports(self, estimand):
        return True

    def estimate(self, dataset, estimands, seed):
        fit = fit_probit_bart(dataset, self.config, seed=seed)
        preds = predict_counterfactuals(fit, dataset, threads=self.threads)
        details = {"posterior": preds.summary(list(dataset.treatment_labels)),
                   "trace": fit.trace}
        results = []
        for estimand in estimands:
            if self.discard:
                retained = bart_discard(preds, dataset.treatment, estimand,
                                        per_pair=self.options.per_pair).retained
            else:
                retained = estimand.eligible(dataset.treatment)
            effect = bart_effect(preds, dataset.treatment, estimand, retained,
                                 method_id=self.name)
            effect.details.update(details)
            results.append(effect)
        return results
