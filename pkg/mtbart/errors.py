"""
This module contains the exceptions raised by the estimation code.
Configuration problems are reported with plain ValueError, like the rest of
the configuration layer does.
"""


class DataValidationError(ValueError):
    """
    Raised when a dataset breaks one or more of its invariants.
    """
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("Dataset is invalid: " + "; ".join(self.violations))


class EstimationError(RuntimeError):
    """
    Base class for failures of a model fit or an effect estimator.
    """


class ConvergenceError(EstimationError):
    """
    An iterative solver did not converge. The trace holds one entry per iteration.
    """
    def __init__(self, message, trace=None):
        self.trace = list(trace or [])
        super().__init__(message)


class SeparationError(EstimationError):
    """
    The multinomial logistic fit hit (quasi-)separation with no ridge penalty.
    """


class PositivityError(EstimationError):
    """
    A generalized propensity score needed for a weight is zero.
    """


class NoCommonSupportError(EstimationError):
    """
    No units are left to estimate from after common support filtering.
    """


class SamplerError(EstimationError):
    """
    The BART sampler produced a non-finite value.
    """
    def __init__(self, message, iteration=None, diagnostics=None):
        self.iteration = iteration
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)
