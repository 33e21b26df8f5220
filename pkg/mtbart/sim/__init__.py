"""
Simulation designs, super-population truth and the replication harness.
"""

from mtbart.sim.designs import (Sim1Config, Sim2Config, SimData, calibrate_intercepts,
                                calibrate_outcome_intercepts, calibrated, gen_sim1, gen_sim2,
                                generate, load_scenario, scenario_names)
from mtbart.sim.runner import (ReplicationResults, convergence_rate, convergence_slope,
                               discard_percentages, metrics, metrics_table, run_replications)
from mtbart.sim.truth import TruthTable, compute_truth, truth_table

__all__ = ["ReplicationResults", "Sim1Config", "Sim2Config", "SimData", "TruthTable",
           "calibrate_intercepts", "calibrate_outcome_intercepts", "calibrated", "compute_truth",
           "convergence_rate", "convergence_slope", "discard_percentages", "gen_sim1", "gen_sim2",
           "generate", "load_scenario", "metrics", "metrics_table", "run_replications",
           "scenario_names", "truth_table"]
