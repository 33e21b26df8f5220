"""
A script to time one probit BART fit on a simulated dataset

Usage:

    python scripts/bart_runtime_benchmark.py [scenario] [n] [iterations]

The defaults are sim1_I with 1200 units, 100 trees and 5000 iterations
(3000 burn-in). The fit should finish in a few minutes on a desktop.
"""

import logging
import sys

import humanize

from mtbart.bart import BartConfig, fit_probit_bart, predict_counterfactuals
from mtbart.sim import calibrated, generate, load_scenario

logging.basicConfig(format="%(asctime)s %(levelname)s %(message)s", level=logging.INFO)

scenario = sys.argv[1] if len(sys.argv) > 1 else "sim1_I"
n = int(sys.argv[2]) if len(sys.argv) > 2 else 1200
iterations = int(sys.argv[3]) if len(sys.argv) > 3 else 5000

config = calibrated(load_scenario(scenario))
data = generate(config, seed=0, n=n)
bart_config = BartConfig(total_iterations=iterations, burn_in=iterations * 3 // 5)

fit = fit_probit_bart(data.dataset, bart_config, seed=1)
preds = predict_counterfactuals(fit, data.dataset)

accepted = fit.trace.filter(like="_accepted").sum()
tried = fit.trace.filter(like="_tried").sum()
for move in ("grow", "prune", "change", "swap"):
    if tried[f"{move}_tried"]:
        print(f"{move:>6}: {accepted[f'{move}_accepted'] / tried[f'{move}_tried']:.1%} accepted")
print(f"{scenario}, n={humanize.intcomma(n)}, {bart_config.n_trees} trees, "
      f"{humanize.intcomma(iterations)} iterations: {humanize.precisedelta(fit.elapsed)}")
print(f"posterior draws kept: {preds.draws.shape[0]}")
