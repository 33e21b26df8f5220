"""
Counterfactual predictions from a BART fit, the effect estimator that averages
them over units and posterior draws, and the posterior-uncertainty discarding
rule for units outside the common support.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict

import numpy as np
import pandas as pd
from scipy.special import ndtr

from mtbart.bart.sampler import BartFit, bart_design
from mtbart.core import ATT, POSTERIOR_CREDIBLE, Dataset, EffectEstimate, EstimandSpec
from mtbart.errors import NoCommonSupportError

# the largest float32 below 1, so draws stay inside (0, 1)
_UPPER = float(np.nextafter(np.float32(1.0), np.float32(0.0)))
_LOWER = float(np.finfo(np.float32).tiny)


@dataclass(frozen=True)
class PosteriorPredictions:
    """
    draws[l, i, w - 1] = f^l(w, X_i), the draw-l probability of Y(w) = 1 for unit i.
    """
    draws: np.ndarray
    posterior_sd: np.ndarray

    @classmethod
    def from_draws(cls, draws) -> "PosteriorPredictions":
        draws = np.asarray(draws, dtype=np.float32)
        return cls(draws=draws, posterior_sd=draws.std(axis=0, dtype=np.float64))

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def n_units(self) -> int:
        return self.draws.shape[1]

    @property
    def n_treatments(self) -> int:
        return self.draws.shape[2]

    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0, dtype=np.float64)

    def summary(self, treatment_labels=None) -> pd.DataFrame:
        """
        Per unit and arm: posterior mean and standard deviation.
        """
        mean = self.mean()
        labels = treatment_labels or [str(w) for w in range(1, self.n_treatments + 1)]
        frame = pd.DataFrame({"unit": np.arange(self.n_units)})
        for w, label in enumerate(labels):
            frame[f"mean_{label}"] = mean[:, w]
            frame[f"sd_{label}"] = self.posterior_sd[:, w]
        return frame


def _check_layout(fit: BartFit, dataset: Dataset):
    expected = [(meta.name, meta.kind, meta.levels) for meta in fit.column_meta]
    actual = [(meta.name, meta.kind, meta.levels) for meta in dataset.column_meta]
    if expected != actual or dataset.n_treatments != fit.n_treatments:
        raise ValueError("Dataset columns do not match the columns BART was fit on")


def predict_counterfactuals(fit: BartFit, dataset: Dataset, threads=1) -> PosteriorPredictions:
    """
    Phi of the forest sum for every retained draw, unit and treatment arm.
    """
    _check_layout(fit, dataset)
    designs = [bart_design(dataset, arm=w)[0] for w in range(1, fit.n_treatments + 1)]

    def predict(forest):
        draw = np.empty((dataset.n_units, fit.n_treatments), dtype=np.float32)
        for w, X in enumerate(designs):
            draw[:, w] = np.clip(ndtr(forest.predict(X)), _LOWER, _UPPER)
        return draw

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            draws = list(executor.map(predict, fit.forests))
    else:
        draws = [predict(forest) for forest in fit.forests]
    if not draws:
        raise ValueError("The BART fit has no retained draws")
    return PosteriorPredictions.from_draws(np.stack(draws))


def effect_draws(preds: PosteriorPredictions, estimand: EstimandSpec, retained) -> np.ndarray:
    """
    Per draw, the average over the retained units of the s1 mean minus the s2 mean.
    """
    retained = np.asarray(retained, dtype=np.int64)
    first = [w - 1 for w in estimand.s1]
    second = [w - 1 for w in estimand.s2]
    subset = preds.draws[:, retained, :].astype(np.float64)
    contrast = subset[:, :, first].mean(axis=2) - subset[:, :, second].mean(axis=2)
    return contrast.mean(axis=1)


def bart_effect(preds: PosteriorPredictions, treatment, estimand: EstimandSpec, retained,
                method_id="bart", level=0.95) -> EffectEstimate:
    """
    Posterior mean of the effect draws with an equal-tailed credible interval.
    """
    treatment = np.asarray(treatment)
    retained = np.asarray(retained, dtype=np.int64)
    estimand.check_levels(preds.n_treatments)
    if len(retained) == 0:
        raise NoCommonSupportError(f"no units retained for {estimand.label()}")
    eligible = estimand.eligible(treatment)
    if estimand.kind == ATT and not np.all(np.isin(retained, eligible)):
        raise ValueError("ATT retained units must belong to the reference group")
    values = effect_draws(preds, estimand, retained)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(values, [alpha, 1.0 - alpha])
    return EffectEstimate(estimand=estimand, point=float(values.mean()), ci_lower=float(low),
                          ci_upper=float(high), interval_kind=POSTERIOR_CREDIBLE,
                          method_id=method_id, n_used=len(retained),
                          n_discarded=len(eligible) - len(retained))


@dataclass(frozen=True)
class DiscardResult:
    retained: np.ndarray
    discarded: np.ndarray
    n_eligible: int
    per_group: Dict[int, int]

    @property
    def discard_fraction(self) -> float:
        return len(self.discarded) / self.n_eligible if self.n_eligible else 0.0


def bart_discard(preds: PosteriorPredictions, treatment, estimand: EstimandSpec,
                 per_pair=False) -> DiscardResult:
    """
    A unit of group w is discarded when, for every counterfactual arm w', its
    posterior SD of f(w') exceeds the largest posterior SD of f(w) in group w.
    ATT applies the rule to the reference group only, ATE to every group. The
    counterfactual arms are all other treatments, or only the estimand's arms
    when per_pair is set.
    """
    treatment = np.asarray(treatment)
    sd = preds.posterior_sd
    n_treatments = preds.n_treatments
    eligible = estimand.eligible(treatment)
    groups = estimand.s1 if estimand.kind == ATT else tuple(range(1, n_treatments + 1))

    discard = np.zeros(len(treatment), dtype=bool)
    per_group = {}
    for w in groups:
        members = np.flatnonzero(treatment == w)
        if len(members) == 0:
            continue
        if per_pair:
            others = [a for a in estimand.arms if a != w]
        else:
            others = [a for a in range(1, n_treatments + 1) if a != w]
        threshold = sd[members, w - 1].max()
        exceeds = np.all(sd[np.ix_(members, [a - 1 for a in others])] > threshold, axis=1)
        discard[members[exceeds]] = True
        per_group[w] = int(exceeds.sum())

    mask = np.zeros(len(treatment), dtype=bool)
    mask[eligible] = True
    retained = np.flatnonzero(mask & ~discard)
    discarded = np.flatnonzero(mask & discard)
    logging.info("BART discarding rule for %s: %s of %s units discarded", estimand.label(),
                 len(discarded), len(eligible))
    return DiscardResult(retained=retained, discarded=discarded, n_eligible=len(eligible),
                         per_group=per_group)
