"""
This file contains the IptwMethod class, which estimates effects by inverse
probability of treatment weighting with a GPS from multinomial logistic
regression or from gradient boosting, optionally with trimmed weights.
"""
import logging

import numpy as np

from mtbart.core import ATE, ATT, BOOTSTRAP_PERCENTILE, EffectEstimate, EstimandSpec
from mtbart.gps import balance_table, fit_gbm, fit_mlr, predict_gbm, predict_mlr
from mtbart.method_options import MethodOptions
from mtbart.utils.seeding import substream_seed
from mtbart.weighting import bootstrap_ci, iptw_estimate, iptw_weights, trim_weights

MLR = "mlr"
GBM = "gbm"


class IptwMethod:
    """
    The IptwMethod class. The GPS is refit inside every bootstrap resample.
    """
    def __init__(self, gps_model, trim=False, options: MethodOptions = None,
                 bootstrap_replicates=200, threads=1):
        if gps_model not in (MLR, GBM):
            raise ValueError(f"Unknown GPS model {gps_model}")
        self.gps_model = gps_model
        self.trim = trim
        self.options = options or MethodOptions()
        self.bootstrap_replicates = self.options.bootstrap_replicates or bootstrap_replicates
        self.threads = threads
        self.name = f"iptw-{gps_model}" + ("-trim" if trim else "")
        logging.debug("IptwMethod %s initialized with %s bootstrap resamples",
                      self.name, self.bootstrap_replicates)

    def supports(self, estimand):
        return estimand.kind == ATE or len(estimand.s1) == 1

    def _stopping_estimand(self, dataset, estimand):
        """
        The estimand whose weights drive the boosting stopping rule: ATE over all
        treatments, or the ATT of the reference against all other treatments.
        """
        if estimand.kind == ATE:
            return None
        others = tuple(w for w in dataset.arms if w != estimand.reference)
        return EstimandSpec(ATT, (estimand.reference,), others)

    def fit_gps(self, dataset, estimand, seed):
        if self.gps_model == MLR:
            return predict_mlr(fit_mlr(dataset, ridge_penalty=self.options.ridge_penalty), dataset)
        model = fit_gbm(dataset, self._stopping_estimand(dataset, estimand),
                        shrinkage=self.options.shrinkage, max_depth=self.options.max_depth,
                        max_iterations=self.options.max_iterations,
                        eval_stride=self.options.eval_stride,
                        seed=substream_seed(seed, "gbm"))
        return predict_gbm(model, dataset)

    def weights(self, gps, dataset, estimand):
        weights = iptw_weights(gps, dataset.treatment, estimand)
        if self.trim:
            weights = trim_weights(weights, self.options.trim_lower, self.options.trim_upper,
                                   per_group=self.options.trim_per_group)
        return weights

    def _key(self, dataset, estimand):
        return None if self.gps_model == MLR else self._stopping_estimand(dataset, estimand)

    def fit_all(self, dataset, estimands, seed):
        """
        GPS fits keyed by the stopping estimand, shared between estimands that
        use the same model.
        """
        fits = {}
        for estimand in estimands:
            key = self._key(dataset, estimand)
            if key not in fits:
                fits[key] = self.fit_gps(dataset, estimand, seed)
        return fits

    def point_estimates(self, dataset, estimands, seed, fits=None):
        fits = fits or self.fit_all(dataset, estimands, seed)
        return np.asarray([iptw_estimate(dataset, self.weights(fits[self._key(dataset, estimand)],
                                                               dataset, estimand))
                           for estimand in estimands])

    def estimate(self, dataset, estimands, seed):
        fits = self.fit_all(dataset, estimands, seed)
        points = self.point_estimates(dataset, estimands, seed, fits)
        low, high = bootstrap_ci(dataset,
                                 lambda resample: self.point_estimates(resample, estimands, seed),
                                 n_replicates=self.bootstrap_replicates,
                                 seed=substream_seed(seed, "bootstrap"), threads=self.threads)
        low, high = np.atleast_1d(low), np.atleast_1d(high)
        results = []
        for position, estimand in enumerate(estimands):
            weights = self.weights(fits[self._key(dataset, estimand)], dataset, estimand)
            results.append(EffectEstimate(
                estimand=estimand, point=float(points[position]), ci_lower=float(low[position]),
                ci_upper=float(high[position]), interval_kind=BOOTSTRAP_PERCENTILE,
                method_id=self.name, n_used=len(estimand.eligible(dataset.treatment)),
                details={"balance": balance_table(dataset, weights, estimand).to_frame()}))
        return results
