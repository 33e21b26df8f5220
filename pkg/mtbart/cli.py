"""
This file is the entry point of the command line interface. It reads the
configuration file and the command line arguments, initializes the logger and
runs one of the commands: estimate, simulate, gps, overlap or convergence.
"""

import argparse
import configparser
import logging
import os
import sys

import pandas as pd

from mtbart.configuration_manager import ConfigurationManager
from mtbart.core import ATE, EstimandSpec, default_estimands, overlap_summary, parse_estimand, \
    require_valid
from mtbart.errors import DataValidationError, EstimationError
from mtbart.estimator import Estimator
from mtbart.gps import balance_table, fit_gbm, fit_mlr, gbm_balance_path, predict_gbm, \
    predict_mlr, rectangular_support
from mtbart.ingest import load_dataset, read_schema
from mtbart.methods import create_method
from mtbart.methods.bart_method import BartMethod
from mtbart.results import results_document, write_csv, write_results
from mtbart.sim import calibrated, convergence_rate, discard_percentages, generate, \
    load_scenario, metrics, metrics_table, run_replications
from mtbart.sim.designs import Sim2Config
from mtbart.sim.runner import gps_for_support
from mtbart.weighting import iptw_weights

COMMANDS = ("estimate", "simulate", "gps", "overlap", "convergence")
CONFIG_FILE = 'mtbart.ini'
EXIT_VALIDATION = 2
EXIT_ESTIMATION = 3


def read_args(argv=None):
    """
    read the command line arguments
    """
    parser = argparse.ArgumentParser(
        prog="mtbart",
        description="Causal effects of multiple treatments on a binary outcome")
    parser.add_argument("command", choices=COMMANDS, help="What to run")
    parser.add_argument("--debug",
                        help="Enable debug mode", action='store_true')
    parser.add_argument("--data", help="CSV dataset", type=str)
    parser.add_argument("--schema",
                        help="Schema file declaring the treatment, outcome and covariate kinds",
                        type=str)
    parser.add_argument("--methods",
                        help="Comma separated methods: ra, iptw-mlr, iptw-gbm, iptw-mlr-trim, "
                             "iptw-gbm-trim, vm, bart, bart-discard",
                        type=str)
    parser.add_argument("--estimands", nargs="+",
                        help="Estimands such as 'ATT(1|1,2)' 'ATE(2,3)'. "
                             "Default: the pairwise ATTs of treatment 1 and all pairwise ATEs")
    parser.add_argument("--scenario",
                        help="Simulation scenario name (e.g. sim1_III, sim2_weak) or JSON file",
                        type=str)
    parser.add_argument("--replications", help="Number of simulation replications", type=int)
    parser.add_argument("--bootstrap-replicates",
                        help="Number of bootstrap resamples for IPTW and VM intervals", type=int)
    parser.add_argument("--sizes",
                        help="Comma separated sample sizes of the convergence study", type=str)
    parser.add_argument("--superpopulation", action='store_true',
                        help="Draw each replication from one super-population")
    parser.add_argument("--gps-model", choices=("mlr", "gbm"),
                        help="GPS model of the overlap command")
    parser.add_argument("--option", action="append",
                        help="Method option override written method.Key=value, "
                             "e.g. bart.Iterations=2000; may be repeated")
    parser.add_argument("--seed", help="Master random seed", type=int)
    parser.add_argument("--threads", help="Maximum number of parallel workers", type=int)
    parser.add_argument("--out", help="Output directory", type=str)
    return parser.parse_args(argv)


def read_config(path=CONFIG_FILE):
    """
    Read the configuration file. Returns the DEFAULT section and the METHOD
    sections keyed by method name.
    """
    logging.info("Reading the configuration file... ")
    ini = configparser.ConfigParser()
    ini.optionxform = str
    ini.read(path)
    default = ini['DEFAULT']
    logging.debug("Default Configuration: %s", dict(default))

    method_configs = {}
    for section in ini.sections():
        # read the options of each method
        if section.startswith('METHOD'):
            method = section[len('METHOD'):].strip()
            method_configs[method] = ini[section]
            logging.debug("Method %s configuration: %s", method, dict(ini[section]))

    return default, method_configs


def init_logger(debug):
    """
    Initialize the logger.
    """
    logging.basicConfig(format="%(asctime)s %(levelname)s %(message)s")
    if debug:
        logging.getLogger().setLevel(logging.DEBUG)
    else:
        logging.getLogger().setLevel(logging.INFO)


def build_methods(configuration_manager, threads=None):
    if not configuration_manager.methods:
        raise ValueError('At least one method is required (--methods)')
    threads = configuration_manager.threads if threads is None else threads
    return [create_method(name, configuration_manager.method_options.get(name),
                          bootstrap_replicates=configuration_manager.bootstrap_replicates,
                          threads=threads)
            for name in configuration_manager.methods]


def build_estimands(configuration_manager, n_treatments):
    if not configuration_manager.estimands:
        return default_estimands(n_treatments)
    return [parse_estimand(text, n_treatments) for text in configuration_manager.estimands]


def load_input(configuration_manager, need_outcome):
    if not configuration_manager.data or not configuration_manager.schema:
        raise ValueError('This command needs --data and --schema')
    dataset = load_dataset(configuration_manager.data, read_schema(configuration_manager.schema))
    return require_valid(dataset, need_outcome=need_outcome)


def load_simulation(configuration_manager, default=None):
    scenario = configuration_manager.scenario or default
    if not scenario:
        raise ValueError('This command needs --scenario')
    return calibrated(load_scenario(scenario))


def _collect(estimates, key):
    frames = []
    for estimate in estimates:
        frame = estimate.details.get(key)
        if frame is not None:
            frames.append(frame.assign(method=estimate.method_id,
                                       estimand=estimate.estimand.label()))
    return pd.concat(frames, ignore_index=True) if frames else None


def cmd_estimate(configuration_manager):
    """
    Estimate every requested estimand with every requested method.
    """
    dataset = load_input(configuration_manager, need_outcome=True)
    estimands = build_estimands(configuration_manager, dataset.n_treatments)
    estimator = Estimator(build_methods(configuration_manager))
    estimator.check(estimands)

    run = estimator.estimate(dataset, estimands, configuration_manager.seed)
    if not run.estimates:
        raise EstimationError('Every method failed: ' + '; '.join(
            f'{method}: {message}' for method, message in run.failures.items()))

    out_dir = configuration_manager.out_dir
    write_results(out_dir, results_document('estimate', run.estimates, dataset.treatment_labels,
                                            configuration_manager.seed, run.failures))
    write_csv(out_dir, 'results.csv', pd.DataFrame([e.to_record() for e in run.estimates]))
    pairs = _collect(run.estimates, 'pairs')
    if pairs is not None:
        write_csv(out_dir, 'pairs.csv', pairs)
    balance = _collect(run.estimates, 'balance')
    if balance is not None:
        write_csv(out_dir, 'balance.csv', balance)
    written = set()
    for estimate in run.estimates:
        # one posterior per BART method, shared by its estimands
        if 'posterior' in estimate.details and estimate.method_id not in written:
            suffix = '' if estimate.method_id == 'bart' else '_' + estimate.method_id
            write_csv(out_dir, f'posterior{suffix}.csv', estimate.details['posterior'])
            write_csv(out_dir, f'bart_trace{suffix}.csv', estimate.details['trace'])
            written.add(estimate.method_id)
    return run


def cmd_gps(configuration_manager):
    """
    Fit both GPS models and write the scores, the balance before and after
    weighting and the rectangular support.
    """
    dataset = load_input(configuration_manager, need_outcome=False)
    everyone = EstimandSpec(ATE, (1,), tuple(range(2, dataset.n_treatments + 1)))
    mlr_options = configuration_manager.options_for('iptw-mlr')
    gbm_options = configuration_manager.options_for('iptw-gbm')

    mlr_gps = predict_mlr(fit_mlr(dataset, ridge_penalty=mlr_options.ridge_penalty), dataset)
    gbm_model = fit_gbm(dataset, shrinkage=gbm_options.shrinkage,
                        max_depth=gbm_options.max_depth,
                        max_iterations=gbm_options.max_iterations,
                        eval_stride=gbm_options.eval_stride, seed=configuration_manager.seed)
    gbm_gps = predict_gbm(gbm_model, dataset)

    scores, balance, support, overlap = [], [], [], []
    labels = dataset.treatment_labels
    unweighted = [1.0] * dataset.n_units
    balance.append(balance_table(dataset, unweighted, everyone).to_frame().assign(model='none'))
    for model, gps in (('mlr', mlr_gps), ('gbm', gbm_gps)):
        frame = pd.DataFrame(gps.values, columns=[f'r_{label}' for label in labels])
        frame.insert(0, 'treatment', dataset.treatment)
        frame.insert(0, 'unit', range(dataset.n_units))
        scores.append(frame.assign(model=model))
        weights = iptw_weights(gps, dataset.treatment, everyone)
        balance.append(balance_table(dataset, weights, everyone).to_frame().assign(model=model))
        support.append(rectangular_support(gps, dataset.treatment).to_frame().assign(model=model))
        overlap.append(overlap_summary(gps, dataset.treatment).assign(model=model))

    out_dir = configuration_manager.out_dir
    write_csv(out_dir, 'gps.csv', pd.concat(scores, ignore_index=True))
    write_csv(out_dir, 'balance.csv', pd.concat(balance, ignore_index=True))
    write_csv(out_dir, 'support.csv', pd.concat(support, ignore_index=True))
    write_csv(out_dir, 'overlap.csv', pd.concat(overlap, ignore_index=True))
    write_csv(out_dir, 'gbm_path.csv', gbm_balance_path(gbm_model))


def cmd_simulate(configuration_manager):
    """
    Run a simulation campaign and write the MAB / RMSE / CP table.
    """
    config = load_simulation(configuration_manager)
    estimands = build_estimands(configuration_manager, config.n_treatments)
    # workers are processes; methods run single-threaded inside them
    methods = build_methods(configuration_manager, threads=1)
    results = run_replications(config, methods, estimands, configuration_manager.replications,
                               configuration_manager.seed, threads=configuration_manager.threads,
                               superpopulation=configuration_manager.superpopulation,
                               progress=configuration_manager.debug)
    report = metrics(results.estimates, results.truth)

    out_dir = configuration_manager.out_dir
    write_csv(out_dir, 'replications.csv', results.estimates)
    write_csv(out_dir, 'metrics.csv', metrics_table(report))
    write_csv(out_dir, 'metrics_long.csv', report)
    labels = [str(w) for w in range(1, config.n_treatments + 1)]
    write_results(out_dir, results_document(
        'simulate', [], labels, configuration_manager.seed,
        extra={'scenario': config.name, 'replications': results.n_replications,
               'truth': results.truth.values, 'flagged_methods': results.flagged_methods}))
    return report


def cmd_overlap(configuration_manager):
    """
    GPS boxplot data of one simulated dataset and the discard percentages of
    both common-support rules over the replications.
    """
    config = load_simulation(configuration_manager, default='sim2_weak')
    if not isinstance(config, Sim2Config):
        raise ValueError('The overlap command needs a Simulation 2 scenario (sim2_<level>)')
    seed = configuration_manager.seed
    bart = BartMethod(options=configuration_manager.options_for('bart'))

    data = generate(config, seed)
    gps = gps_for_support(data.dataset, configuration_manager.gps_model, seed)
    frame = overlap_summary(gps, data.dataset.treatment)
    support = rectangular_support(gps, data.dataset.treatment)
    discards = discard_percentages(config, configuration_manager.replications, seed,
                                   bart_config=bart.config,
                                   gps_model=configuration_manager.gps_model,
                                   progress=configuration_manager.debug)

    out_dir = configuration_manager.out_dir
    write_csv(out_dir, 'overlap.csv', frame)
    write_csv(out_dir, 'support.csv', support.to_frame())
    write_csv(out_dir, 'discard.csv', discards)
    labels = [str(w) for w in range(1, config.n_treatments + 1)]
    write_results(out_dir, results_document(
        'overlap', [], labels, seed,
        extra={'scenario': config.name, 'gps_model': configuration_manager.gps_model,
               'bart_discarded': float(discards['bart_discarded'].mean()),
               'gps_discarded': float(discards['gps_discarded'].mean())}))
    return frame, discards


def cmd_convergence(configuration_manager):
    """
    RMSE over increasing sample sizes and the slope of log RMSE on -log n.
    """
    config = load_simulation(configuration_manager, default='sim1_III')
    estimands = build_estimands(configuration_manager, config.n_treatments)
    methods = build_methods(configuration_manager, threads=1)
    result = convergence_rate(config, methods, estimands, configuration_manager.sizes,
                              configuration_manager.replications, configuration_manager.seed,
                              threads=configuration_manager.threads,
                              progress=configuration_manager.debug)
    out_dir = configuration_manager.out_dir
    write_csv(out_dir, 'convergence.csv', result.table)
    write_csv(out_dir, 'slopes.csv', result.slopes)
    return result


COMMAND_HANDLERS = {
    'estimate': cmd_estimate,
    'simulate': cmd_simulate,
    'gps': cmd_gps,
    'overlap': cmd_overlap,
    'convergence': cmd_convergence,
}


def run(argv=None):
    """
    Configure and run one command; returns the process exit code.
    """
    # Initialize the configuration with the default values
    configuration_manager = ConfigurationManager()
    try:
        # First, read the configuration file and update the configuration
        default_config, method_configs = read_config()
        configuration_manager.update_from_config(default_config, method_configs)

        # Then, read the command line arguments and update the configuration
        # the command line arguments take precedence over the configuration file
        args = read_args(argv)
        configuration_manager.update_from_args(args)
        init_logger(configuration_manager.debug)

        # create the output directory if it does not exist
        if not os.path.exists(configuration_manager.out_dir):
            logging.info("Output directory does not exist, creating: %s",
                         configuration_manager.out_dir)
            os.makedirs(configuration_manager.out_dir)

        COMMAND_HANDLERS[args.command](configuration_manager)
    except DataValidationError as exc:
        for violation in exc.violations:
            logging.error("%s", violation)
        return EXIT_VALIDATION
    except ValueError as exc:
        logging.error("%s", exc)
        return EXIT_VALIDATION
    except EstimationError as exc:
        logging.error("Estimation failed: %s", exc)
        return EXIT_ESTIMATION
    return 0


def main():
    """
    The main entry point of the application.
    """
    sys.exit(run())
