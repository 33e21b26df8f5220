"""
True effects computed on a noiseless super-population: the contrasts of the
expected potential outcomes E[Y(w) | X], not of Bernoulli draws.
"""

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np

from mtbart.core import EstimandSpec
from mtbart.errors import EstimationError
from mtbart.sim.designs import SimConfig, SimData, generate

SUPER_POPULATION_SIZE = 100000


@dataclass(frozen=True)
class TruthTable:
    values: Dict[str, float]

    def __getitem__(self, estimand) -> float:
        key = estimand.label() if isinstance(estimand, EstimandSpec) else str(estimand)
        return self.values[key]

    def __post_init__(self):
        for label, value in self.values.items():
            if not -1.0 <= value <= 1.0:
                raise ValueError(f"True effect {label} = {value} is not a risk difference")


def population_truth(population: SimData, estimand: EstimandSpec) -> float:
    """
    Average of the s1-mean minus s2-mean of E[Y(w) | X_i] over the estimand's
    subpopulation (the s1 groups for ATT, everyone for ATE).
    """
    estimand.check_levels(population.dataset.n_treatments)
    units = estimand.eligible(population.dataset.treatment)
    if len(units) == 0:
        raise EstimationError(f"The super-population has no units for {estimand.label()}")
    probabilities = population.probabilities[units]
    first = probabilities[:, [w - 1 for w in estimand.s1]].mean(axis=1)
    second = probabilities[:, [w - 1 for w in estimand.s2]].mean(axis=1)
    return float(np.mean(first - second))


def truth_table(population: SimData, estimands) -> TruthTable:
    return TruthTable({estimand.label(): population_truth(population, estimand)
                       for estimand in estimands})


def super_population(config: SimConfig, super_n=SUPER_POPULATION_SIZE, seed=0) -> SimData:
    logging.info("Generating a super-population of %s units for %s", super_n, config.name)
    return generate(config, seed, n=super_n)


def compute_truth(config: SimConfig, estimand: EstimandSpec, super_n=SUPER_POPULATION_SIZE,
                  seed=0) -> float:
    """
    True risk difference of one estimand on a super-population of super_n units.
    """
    return population_truth(super_population(config, super_n, seed), estimand)
