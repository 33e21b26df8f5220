"""
This file contains the Estimator class which is high level class for
running several estimation methods on the same dataset.
The methods implement the estimate method, such as ra, iptw-mlr, bart, etc.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List

import humanize
import numpy as np

from mtbart.core import EffectEstimate
from mtbart.errors import EstimationError
from mtbart.utils.seeding import substream_seed


@dataclass
class EstimationRun:
    estimates: List[EffectEstimate] = field(default_factory=list)
    failures: Dict[str, str] = field(default_factory=dict)


class Estimator:
    """
    The Estimator class is a high level class for applying a list of methods
    to one dataset. A failing method does not stop the others.
    """
    def __init__(self, methods):
        if not methods:
            raise ValueError("At least one method is required")
        names = [method.name for method in methods]
        if len(set(names)) != len(names):
            raise ValueError(f"Methods are listed more than once: {names}")
        self.methods = methods

    def check(self, estimands):
        """
        Reject estimands a method cannot estimate, e.g. an ATE for vm.
        """
        if not estimands:
            raise ValueError("At least one estimand is required")
        for method in self.methods:
            unsupported = [estimand.label() for estimand in estimands
                           if not method.supports(estimand)]
            if unsupported:
                raise ValueError(f"Method {method.name} cannot estimate {', '.join(unsupported)}")

    def estimate(self, dataset, estimands, seed) -> EstimationRun:
        """
        Run every method. Each method gets its own seed derived from its name,
        so the results do not depend on the order of the methods.
        """
        self.check(estimands)
        run = EstimationRun()
        for method in self.methods:
            started = time.monotonic()
            logging.info("Estimating %s with %s", ", ".join(e.label() for e in estimands),
                         method.name)
            try:
                run.estimates.extend(method.estimate(dataset, estimands,
                                                     substream_seed(seed, method.name)))
            except (EstimationError, np.linalg.LinAlgError) as exc:
                logging.warning("Method %s failed: %s", method.name, exc)
                run.failures[method.name] = str(exc)
                continue
            except (ValueError, IndexError) as exc:
                logging.error("Method %s failed unexpectedly: %s", method.name, exc,
                              exc_info=True)
                run.failures[method.name] = f"{type(exc).__name__}: {exc}"
                continue
            logging.info("Method %s finished in %s", method.name,
                         humanize.naturaldelta(time.monotonic() - started))
        return run
