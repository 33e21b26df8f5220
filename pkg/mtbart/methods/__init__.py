"""
The estimation methods. Every method has a name, supports(estimand) and
estimate(dataset, estimands, seed) returning one EffectEstimate per estimand.
"""

from mtbart.method_options import MethodOptions
from mtbart.methods.bart_method import BartMethod
from mtbart.methods.iptw_method import GBM, MLR, IptwMethod
from mtbart.methods.ra_method import RegressionAdjustmentMethod
from mtbart.methods.vm_method import VectorMatchingMethod

METHOD_NAMES = ("ra", "iptw-mlr", "iptw-gbm", "iptw-mlr-trim", "iptw-gbm-trim", "vm",
                "bart", "bart-discard")


def create_method(name, options: MethodOptions = None, bootstrap_replicates=200, threads=1):
    """
    Build the method registered under name.
    """
    if name == "ra":
        return RegressionAdjustmentMethod(options)
    if name in ("iptw-mlr", "iptw-gbm", "iptw-mlr-trim", "iptw-gbm-trim"):
        gps_model = MLR if name.startswith("iptw-mlr") else GBM
        return IptwMethod(gps_model, trim=name.endswith("-trim"), options=options,
                          bootstrap_replicates=bootstrap_replicates, threads=threads)
    if name == "vm":
        return VectorMatchingMethod(options, bootstrap_replicates=bootstrap_replicates,
                                    threads=threads)
    if name in ("bart", "bart-discard"):
        return BartMethod(discard=name == "bart-discard", options=options, threads=threads)
    raise ValueError(f"Unknown method {name}; valid methods: {', '.join(METHOD_NAMES)}")


__all__ = ["METHOD_NAMES", "BartMethod", "IptwMethod", "RegressionAdjustmentMethod",
           "VectorMatchingMethod", "create_method"]
