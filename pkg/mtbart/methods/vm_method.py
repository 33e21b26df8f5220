"""
This file contains the VectorMatchingMethod class, which estimates ATTs for
three treatments by vector matching on a multinomial logistic GPS.
"""
import logging

import numpy as np

from mtbart.core import ATT, BOOTSTRAP_PERCENTILE, EffectEstimate
from mtbart.gps import fit_mlr, predict_mlr
from mtbart.matching import vm_att_estimate, vm_match
from mtbart.method_options import MethodOptions
from mtbart.utils.seeding import substream_seed
from mtbart.weighting import bootstrap_ci


class VectorMatchingMethod:
    """
    The VectorMatchingMethod class. Only pairwise ATT estimands with a single
    comparison treatment are supported. The GPS and the matching are redone
    inside every bootstrap resample.
    """
    name = "vm"

    def __init__(self, options: MethodOptions = None, bootstrap_replicates=200, threads=1):
        self.options = options or MethodOptions()
        self.bootstrap_replicates = self.options.bootstrap_replicates or bootstrap_replicates
        self.threads = threads
        logging.debug("VectorMatchingMethod initialized with k: %s, caliper: %s",
                      self.options.clusters, self.options.caliper)

    def supports(self, estimand):
        return estimand.kind == ATT and len(estimand.s1) == 1 and len(estimand.s2) == 1

    def match_all(self, dataset, estimands, seed):
        """
        One MatchedSet per reference treatment.
        """
        unsupported = [estimand.label() for estimand in estimands if not self.supports(estimand)]
        if unsupported:
            raise ValueError(f"Vector matching estimates pairwise ATTs only, "
                             f"not {', '.join(unsupported)}")
        gps = predict_mlr(fit_mlr(dataset, ridge_penalty=self.options.ridge_penalty), dataset)
        return {reference: vm_match(dataset, gps, reference, k=self.options.clusters,
                                    caliper=self.options.caliper, seed=seed,
                                    cluster_on=self.options.cluster_on)
                for reference in sorted({estimand.reference for estimand in estimands})}

    def point_estimates(self, dataset, estimands, seed, matched=None):
        matched = matched or self.match_all(dataset, estimands, seed)
        effects = {reference: vm_att_estimate(matched_set, dataset.outcome)
                   for reference, matched_set in matched.items()}
        return np.asarray([effects[estimand.reference][estimand.s2[0]]
                           for estimand in estimands])

    def estimate(self, dataset, estimands, seed):
        if dataset.outcome is None:
            raise ValueError("Vector matching needs an outcome")
        matched = self.match_all(dataset, estimands, seed)
        points = self.point_estimates(dataset, estimands, seed, matched)
        low, high = bootstrap_ci(dataset,
                                 lambda resample: self.point_estimates(resample, estimands, seed),
                                 n_replicates=self.bootstrap_replicates,
                                 seed=substream_seed(seed, "bootstrap"), threads=self.threads)
        low, high = np.atleast_1d(low), np.atleast_1d(high)
        results = []
        for position, estimand in enumerate(estimands):
            matched_set = matched[estimand.reference]
            results.append(EffectEstimate(
                estimand=estimand, point=float(points[position]), ci_lower=float(low[position]),
                ci_upper=float(high[position]), interval_kind=BOOTSTRAP_PERCENTILE,
                method_id=self.name, n_used=matched_set.n_used,
                n_discarded=matched_set.n_discarded, details={"pairs": matched_set.pairs()}))
        return results
