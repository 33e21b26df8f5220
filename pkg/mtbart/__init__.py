"""
mtbart is a Python package for estimating causal risk differences of three or more
treatments on a binary outcome with BART, generalized propensity score weighting
and vector matching, together with the simulation harness used to compare them.
"""

__version__ = "0.9.0"
