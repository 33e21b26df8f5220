"""
This module contains the MethodOptions class
"""

from mtbart.matching import CLUSTER_ON_COMPARISON, CLUSTER_ON_REMAINING


def _flag(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"Expected a boolean, got {value}")


class MethodOptions:
    """
    This class contains the options of one estimation method. Every method
    reads only the options it needs.
    """
    def __init__(self):
        # bart
        self.trees = 100
        self.iterations = 5000
        self.burn_in = 3000
        self.k = 2.0
        self.per_pair = False
        # iptw-gbm
        self.shrinkage = 0.01
        self.max_depth = 3
        self.max_iterations = 10000
        self.eval_stride = 100
        # iptw-mlr, vm
        self.ridge_penalty = 1e-6
        # ra
        self.prior_scale = 2.5
        self.draws = 1000
        self.per_arm = False
        # vm
        self.caliper = 0.25
        self.clusters = 5
        self.cluster_on = CLUSTER_ON_REMAINING
        # trimming
        self.trim_lower = 0.05
        self.trim_upper = 0.95
        self.trim_per_group = False
        # iptw, vm; None means the run-wide setting
        self.bootstrap_replicates = None

    def set_trees(self, trees):
        """
        set the number of trees in the BART sum
        """
        trees = int(trees)
        if trees < 1:
            raise ValueError('Trees must be a positive integer')
        self.trees = trees

    def set_iterations(self, iterations):
        """
        set the total number of MCMC iterations, burn-in included
        """
        iterations = int(iterations)
        if iterations < 1:
            raise ValueError('Iterations must be a positive integer')
        self.iterations = iterations

    def set_burn_in(self, burn_in):
        burn_in = int(burn_in)
        if burn_in < 0:
            raise ValueError('BurnIn must not be negative')
        self.burn_in = burn_in

    def set_k(self, k):
        """
        set the leaf prior hyperparameter k
        """
        k = float(k)
        if k <= 0:
            raise ValueError('K must be positive')
        self.k = k

    def set_per_pair(self, per_pair):
        self.per_pair = _flag(per_pair)

    def set_shrinkage(self, shrinkage):
        shrinkage = float(shrinkage)
        if shrinkage <= 0 or shrinkage > 1:
            raise ValueError('Shrinkage must be in (0, 1]')
        self.shrinkage = shrinkage

    def set_max_depth(self, max_depth):
        max_depth = int(max_depth)
        if max_depth < 1:
            raise ValueError('MaxDepth must be a positive integer')
        self.max_depth = max_depth

    def set_max_iterations(self, max_iterations):
        """
        set the number of boosting rounds
        """
        max_iterations = int(max_iterations)
        if max_iterations < 1:
            raise ValueError('MaxIterations must be a positive integer')
        self.max_iterations = max_iterations

    def set_eval_stride(self, eval_stride):
        """
        set how often (in boosting rounds) the balance is evaluated
        """
        eval_stride = int(eval_stride)
        if eval_stride < 1:
            raise ValueError('EvalStride must be a positive integer')
        self.eval_stride = eval_stride

    def set_ridge_penalty(self, ridge_penalty):
        ridge_penalty = float(ridge_penalty)
        if ridge_penalty < 0:
            raise ValueError('RidgePenalty must not be negative')
        self.ridge_penalty = ridge_penalty

    def set_prior_scale(self, prior_scale):
        prior_scale = float(prior_scale)
        if prior_scale <= 0:
            raise ValueError('PriorScale must be positive')
        self.prior_scale = prior_scale

    def set_draws(self, draws):
        """
        set the number of posterior coefficient draws of regression adjustment
        """
        draws = int(draws)
        if draws < 1:
            raise ValueError('Draws must be a positive integer')
        self.draws = draws

    def set_per_arm(self, per_arm):
        self.per_arm = _flag(per_arm)

    def set_caliper(self, caliper):
        caliper = float(caliper)
        if caliper <= 0:
            raise ValueError('Caliper must be positive')
        self.caliper = caliper

    def set_clusters(self, clusters):
        clusters = int(clusters)
        if clusters < 1:
            raise ValueError('Clusters must be a positive integer')
        self.clusters = clusters

    def set_cluster_on(self, cluster_on):
        cluster_on = str(cluster_on).strip().lower()
        if cluster_on not in (CLUSTER_ON_REMAINING, CLUSTER_ON_COMPARISON):
            raise ValueError(f'ClusterOn must be {CLUSTER_ON_REMAINING} or {CLUSTER_ON_COMPARISON}')
        self.cluster_on = cluster_on

    def set_trim_lower(self, trim_lower):
        trim_lower = float(trim_lower)
        if trim_lower <= 0 or trim_lower >= self.trim_upper:
            raise ValueError('TrimLower must be in (0, TrimUpper)')
        self.trim_lower = trim_lower

    def set_trim_upper(self, trim_upper):
        trim_upper = float(trim_upper)
        if trim_upper >= 1 or trim_upper <= self.trim_lower:
            raise ValueError('TrimUpper must be in (TrimLower, 1)')
        self.trim_upper = trim_upper

    def set_trim_per_group(self, trim_per_group):
        self.trim_per_group = _flag(trim_per_group)

    def set_bootstrap_replicates(self, bootstrap_replicates):
        bootstrap_replicates = int(bootstrap_replicates)
        if bootstrap_replicates < 100:
            raise ValueError('BootstrapReplicates must be at least 100')
        self.bootstrap_replicates = bootstrap_replicates

    def validate(self):
        """
        Checks that involve more than one option.
        """
        if self.burn_in >= self.iterations:
            raise ValueError('BurnIn must be smaller than Iterations')
        if self.max_iterations < self.eval_stride:
            raise ValueError('MaxIterations must be at least EvalStride')
