"""
Replication runner for the simulation studies, the MAB / RMSE / CP metrics,
the convergence-rate regression and the discard-percentage comparison of the
two common-support rules.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy.stats import linregress
from tqdm import tqdm

from mtbart.bart import BartConfig, bart_discard, fit_probit_bart, predict_counterfactuals
from mtbart.core import ATT, EstimandSpec, require_populated_arms
from mtbart.errors import EstimationError
from mtbart.estimator import Estimator
from mtbart.gps import fit_gbm, fit_mlr, predict_gbm, predict_mlr, rectangular_support
from mtbart.sim.designs import SimConfig, SimData, generate, with_size
from mtbart.sim.truth import SUPER_POPULATION_SIZE, TruthTable, super_population, truth_table
from mtbart.utils.seeding import substream, substream_seed

MAX_FAILURE_RATE = 0.20
ESTIMATE_COLUMNS = ["replication", "method", "estimand", "point", "lo", "hi", "n_used",
                    "n_discarded", "error"]

# super-population shared with worker processes
_POPULATION: Optional[SimData] = None


@dataclass
class ReplicationResults:
    """
    One row per (replication, method, estimand); failed fits have a NaN point
    and the error message.
    """
    estimates: pd.DataFrame
    truth: TruthTable
    n_replications: int

    def failure_rates(self) -> pd.Series:
        failed = self.estimates.groupby("method")["error"].apply(lambda e: (e != "").mean())
        return failed.rename("failure_rate")

    @property
    def flagged_methods(self):
        rates = self.failure_rates()
        return sorted(rates.index[rates > MAX_FAILURE_RATE])


def _init_worker(population):
    global _POPULATION  # pylint: disable=global-statement
    _POPULATION = population


def replication_data(config: SimConfig, master_seed, replication, population=None) -> SimData:
    """
    The dataset of one replication: a fresh draw, or a simple random sample of
    n units from the super-population when one is given.
    """
    if population is None:
        return generate(config, substream_seed(master_seed, "replication", replication))
    rng = substream(master_seed, "subsample", replication)
    indices = np.sort(rng.choice(population.dataset.n_units, size=config.n, replace=False))
    return population.subset(indices)


def _run_one(task):
    config, methods, estimands, master_seed, replication = task
    data = replication_data(config, master_seed, replication, _POPULATION)
    run = Estimator(methods).estimate(data.dataset, estimands,
                                      substream_seed(master_seed, "estimate", replication))
    rows = [{"replication": replication, "method": e.method_id, "estimand": e.estimand.label(),
             "point": e.point, "lo": e.ci_lower, "hi": e.ci_upper, "n_used": e.n_used,
             "n_discarded": e.n_discarded, "error": ""} for e in run.estimates]
    for method, message in run.failures.items():
        logging.warning("Replication %s: method %s failed: %s", replication, method, message)
        rows += [{"replication": replication, "method": method, "estimand": estimand.label(),
                  "point": np.nan, "lo": np.nan, "hi": np.nan, "n_used": 0, "n_discarded": 0,
                  "error": message} for estimand in estimands]
    return rows


def run_replications(config: SimConfig, methods, estimands, replications, master_seed,
                     threads=1, superpopulation=False, super_n=SUPER_POPULATION_SIZE,
                     truth: Optional[TruthTable] = None, progress=False) -> ReplicationResults:
    """
    Apply every method to every replication dataset. Replication r uses
    substreams keyed by r only, so results do not depend on scheduling.
    """
    if replications < 1:
        raise ValueError("At least one replication is required")
    Estimator(methods).check(estimands)
    for estimand in estimands:
        estimand.check_levels(config.n_treatments)

    population = None
    if truth is None or superpopulation:
        population = super_population(config, super_n, substream_seed(master_seed, "truth"))
    if truth is None:
        truth = truth_table(population, estimands)
    sampled = population if superpopulation else None
    if sampled is not None and config.n > sampled.dataset.n_units:
        raise ValueError("Replication size exceeds the super-population")

    tasks = [(config, methods, estimands, master_seed, r) for r in range(replications)]
    logging.info("Running %s replications of %s with %s", replications, config.name,
                 ", ".join(method.name for method in methods))
    rows = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                 initargs=(sampled,)) as executor:
            for result in tqdm(executor.map(_run_one, tasks), total=len(tasks),
                               disable=not progress, desc=config.name):
                rows.extend(result)
    else:
        _init_worker(sampled)
        try:
            for task in tqdm(tasks, disable=not progress, desc=config.name):
                rows.extend(_run_one(task))
        finally:
            _init_worker(None)

    results = ReplicationResults(pd.DataFrame(rows, columns=ESTIMATE_COLUMNS), truth,
                                 replications)
    for method in results.flagged_methods:
        logging.warning("Method %s failed in more than %d%% of the replications", method,
                        int(MAX_FAILURE_RATE * 100))
    return results


def metrics(estimates: pd.DataFrame, truth) -> pd.DataFrame:
    """
    MAB, RMSE and CP per (method, estimand) over the successful replications.
    truth maps estimand labels to true values (a TruthTable or a dict).
    """
    values = truth.values if isinstance(truth, TruthTable) else dict(truth)
    successful = estimates[estimates["point"].notna()]
    if successful.empty:
        raise ValueError("No successful replication to summarize")
    rows = []
    for (method, estimand), group in estimates.groupby(["method", "estimand"], sort=False):
        ok = group[group["point"].notna()]
        true_value = values[estimand]
        errors = ok["point"].to_numpy(dtype=float) - true_value
        covered = (ok["lo"] <= true_value) & (true_value <= ok["hi"])
        has_interval = ok["lo"].notna() & ok["hi"].notna()
        failure_rate = 1.0 - len(ok) / len(group)
        rows.append({
            "method": method, "estimand": estimand, "truth": true_value,
            "mab": float(np.mean(np.abs(errors))) if len(ok) else np.nan,
            "rmse": float(np.sqrt(np.mean(errors ** 2))) if len(ok) else np.nan,
            "cp": float(covered[has_interval].mean()) if has_interval.any() else np.nan,
            "replications": len(ok), "failures": len(group) - len(ok),
            "flagged": failure_rate > MAX_FAILURE_RATE,
        })
    return pd.DataFrame(rows)


def metrics_table(report: pd.DataFrame) -> pd.DataFrame:
    """
    Rows are methods, columns (estimand, MAB/RMSE/CP) in estimand order.
    """
    order = list(dict.fromkeys(report["estimand"]))
    wide = report.pivot(index="method", columns="estimand", values=["mab", "rmse", "cp"])
    wide = wide.swaplevel(axis=1)
    columns = [(estimand, metric) for estimand in order for metric in ("mab", "rmse", "cp")]
    wide = wide[columns]
    wide.columns = [f"{estimand} {metric.upper()}" for estimand, metric in columns]
    return wide.reindex(list(dict.fromkeys(report["method"]))).reset_index()


def convergence_slope(sizes, rmses):
    """
    Least-squares slope of log RMSE on -log n and its standard error. Sizes
    with zero RMSE are left out.
    """
    sizes = np.asarray(sizes, dtype=float)
    rmses = np.asarray(rmses, dtype=float)
    if len(sizes) < 3 or len(sizes) != len(rmses):
        raise ValueError("The convergence regression needs at least three sizes with an RMSE each")
    keep = rmses > 0
    for size in sizes[~keep]:
        logging.warning("RMSE is zero at n=%s; size left out of the regression", int(size))
    if keep.sum() < 2:
        raise ValueError("Fewer than two sizes with a positive RMSE")
    fit = linregress(-np.log(sizes[keep]), np.log(rmses[keep]))
    return float(fit.slope), float(fit.stderr)


@dataclass
class ConvergenceResult:
    table: pd.DataFrame
    slopes: pd.DataFrame


def convergence_rate(config: SimConfig, methods, estimands, sizes, replications, seed,
                     threads=1, progress=False) -> ConvergenceResult:
    """
    RMSE over the replications at every size, then the slope of log RMSE on
    -log n per (method, estimand). The truth is computed once for all sizes.
    """
    sizes = sorted(int(size) for size in sizes)
    if len(sizes) < 3:
        raise ValueError("The convergence regression needs at least three sizes")
    population = super_population(config, SUPER_POPULATION_SIZE,
                                  substream_seed(seed, "truth"))
    truth = truth_table(population, estimands)
    frames = []
    for size in sizes:
        results = run_replications(with_size(config, size), methods, estimands, replications,
                                   substream_seed(seed, "size", size), threads=threads,
                                   truth=truth, progress=progress)
        report = metrics(results.estimates, truth)
        frames.append(report[["method", "estimand", "rmse"]].assign(size=size))
    table = pd.concat(frames, ignore_index=True)[["size", "method", "estimand", "rmse"]]
    rows = []
    for (method, estimand), group in table.groupby(["method", "estimand"], sort=False):
        slope, stderr = convergence_slope(group["size"], group["rmse"])
        rows.append({"method": method, "estimand": estimand, "slope": slope, "se": stderr})
        logging.info("Convergence of %s for %s: slope %.3f (se %.3f)", method, estimand,
                     slope, stderr)
    return ConvergenceResult(table, pd.DataFrame(rows))


def reference_estimand(n_treatments, reference=1) -> EstimandSpec:
    return EstimandSpec(ATT, (reference,), tuple(w for w in range(1, n_treatments + 1)
                                                 if w != reference))


def gps_for_support(dataset, gps_model="gbm", seed=0, **gbm_options):
    if gps_model == "mlr":
        return predict_mlr(fit_mlr(dataset), dataset)
    if gps_model != "gbm":
        raise ValueError(f"Unknown GPS model {gps_model}")
    model = fit_gbm(dataset, seed=seed, **gbm_options)
    return predict_gbm(model, dataset)


def discard_fractions(data: SimData, bart_config: BartConfig, seed, reference=1,
                      gps_model="gbm", gbm_options=None) -> dict:
    """
    Fraction of the reference group discarded by the BART posterior-SD rule
    and by the rectangular GPS support, on one dataset.
    """
    dataset = data.dataset
    require_populated_arms(dataset)
    estimand = reference_estimand(dataset.n_treatments, reference)
    fit = fit_probit_bart(dataset, bart_config, seed=substream_seed(seed, "bart"))
    preds = predict_counterfactuals(fit, dataset)
    bart_result = bart_discard(preds, dataset.treatment, estimand)

    gps = gps_for_support(dataset, gps_model, substream_seed(seed, "gps"), **(gbm_options or {}))
    members = dataset.group(reference)
    support = rectangular_support(gps, dataset.treatment, eligible=members)
    return {"n_reference": len(members),
            "bart_discarded": bart_result.discard_fraction,
            "gps_discarded": 1.0 - len(support.retained) / len(members)}


def discard_percentages(config: SimConfig, replications, seed, bart_config=BartConfig(),
                        gps_model="gbm", gbm_options=None, progress=False) -> pd.DataFrame:
    """
    Per replication, the reference-group discard fractions of both rules.
    """
    if replications < 1:
        raise ValueError("At least one replication is required")
    rows = []
    for replication in tqdm(range(replications), disable=not progress, desc="discard"):
        data = generate(config, substream_seed(seed, "replication", replication))
        try:
            fractions = discard_fractions(data, bart_config,
                                          substream_seed(seed, "fit", replication),
                                          gps_model=gps_model, gbm_options=gbm_options)
        except (EstimationError, np.linalg.LinAlgError, ValueError, IndexError) as exc:
            logging.warning("Replication %s failed: %s", replication, exc)
            continue
        rows.append({"replication": replication, **fractions})
    frame = pd.DataFrame(rows, columns=["replication", "n_reference", "bart_discarded",
                                        "gps_discarded"])
    if len(frame):
        logging.info("%s: BART rule discards %.1f%%, GPS rule %.1f%% of the reference group",
                     config.name, 100 * frame["bart_discarded"].mean(),
                     100 * frame["gps_discarded"].mean())
    return frame
