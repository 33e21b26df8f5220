"""
Data-generating designs for the simulation studies.

Sim1Config: ten confounders (five standard normal, five three-level categorical),
treatment from a multinomial logit with linear and nonlinear terms, and parallel
logistic response surfaces that differ only in their arm intercepts tau_w.

Sim2Config: treatment drawn first with fixed proportions and the covariates drawn
conditionally on it, which controls how much the groups overlap. The response
surfaces are those of a Sim1 design, optionally restricted to a subset of the
covariates.

The coefficient sets are reconstructions shipped as JSON scenario files; the
intercepts are calibrated so that group sizes and arm prevalences hit their targets.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Dict, Optional, Tuple, Union

import numpy as np
from platformdirs import user_cache_dir
from scipy.special import expit, logsumexp
from scipy.stats import norm

from mtbart.core import CATEGORICAL, CONTINUOUS, ColumnMeta, Dataset
from mtbart.errors import ConvergenceError
from mtbart.utils.seeding import substream

DEFAULT_CACHE_DIR = os.path.join(user_cache_dir("mtbart", "mtbart"), "calibration")
DEFAULT_OUTCOME_TARGETS = (0.301, 0.336, 0.333)
CALIBRATION_SIZE = 100000
TERM_KINDS = ("square", "product", "exp", "threshold")
SIM2_LEVELS = ("weak", "moderate_I", "moderate_II", "strong")


@dataclass(frozen=True)
class CovariateLayout:
    n_continuous: int = 5
    n_categorical: int = 5
    n_levels: int = 3

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(f"X{j}" for j in range(1, self.n_continuous + self.n_categorical + 1))

    def is_categorical(self, name) -> bool:
        return self.names.index(name) >= self.n_continuous

    def column_meta(self) -> Tuple[ColumnMeta, ...]:
        return tuple(ColumnMeta(name, CATEGORICAL, self.n_levels) if self.is_categorical(name)
                     else ColumnMeta(name, CONTINUOUS) for name in self.names)


@dataclass(frozen=True)
class QTerm:
    """
    One nonlinear term of the linear predictors. A categorical column enters
    as the indicator of `level`.
    """
    kind: str
    columns: Tuple[str, ...]
    level: int = 2
    scale: float = 1.0
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ValueError(f"Unknown term kind {self.kind}, expected one of {TERM_KINDS}")
        object.__setattr__(self, "columns", tuple(self.columns))
        expected = 2 if self.kind == "product" else 1
        if len(self.columns) != expected:
            raise ValueError(f"A {self.kind} term takes {expected} column(s)")

    def evaluate(self, covariates, layout: CovariateLayout) -> np.ndarray:
        values = []
        for name in self.columns:
            column = covariates[:, layout.names.index(name)]
            values.append((column == self.level).astype(float) if layout.is_categorical(name)
                          else column)
        if self.kind == "square":
            return values[0] ** 2
        if self.kind == "product":
            return values[0] * values[1]
        if self.kind == "exp":
            return np.exp(self.scale * values[0])
        return (values[0] > self.threshold).astype(float)


def linear_predictor(covariates, layout: CovariateLayout, linear: Dict, terms, nonlinear,
                     include=None) -> np.ndarray:
    """
    sum of linear effects plus sum of nonlinear coefficients times Q terms.
    Only covariates in `include` contribute when it is given.
    """
    eta = np.zeros(len(covariates))
    for name, coefficient in linear.items():
        if include is not None and name not in include:
            continue
        column = covariates[:, layout.names.index(name)]
        if layout.is_categorical(name):
            effects = np.concatenate([[0.0], np.asarray(coefficient, dtype=float)])
            eta += effects[column.astype(np.int64)]
        else:
            eta += float(coefficient) * column
    for term, coefficient in zip(terms, nonlinear):
        if include is not None and not set(term.columns) <= set(include):
            continue
        eta += float(coefficient) * term.evaluate(covariates, layout)
    return eta


@dataclass(frozen=True)
class OutcomeModel:
    """
    logit P(Y(w) = 1 | X) = tau_w + linear + nonlinear. tau is None until calibrated.
    """
    gamma_linear: Dict
    gamma_nonlinear: Tuple[float, ...]
    tau: Optional[Tuple[float, ...]] = None
    targets: Tuple[float, ...] = DEFAULT_OUTCOME_TARGETS

    def shared(self, covariates, layout, terms, include=None) -> np.ndarray:
        return linear_predictor(covariates, layout, self.gamma_linear, terms,
                                self.gamma_nonlinear, include)

    def probabilities(self, covariates, layout, terms, include=None) -> np.ndarray:
        if self.tau is None:
            raise ValueError("Outcome intercepts are not calibrated")
        shared = self.shared(covariates, layout, terms, include)
        return expit(np.asarray(self.tau)[None, :] + shared[:, None])


@dataclass(frozen=True)
class TreatmentModel:
    """
    log P(W = k) / P(W = Z) = alpha_k + linear_k + nonlinear_k for k < Z.
    """
    linear: Tuple[Dict, ...]
    nonlinear: Tuple[Tuple[float, ...], ...]
    intercepts: Optional[Tuple[float, ...]] = None

    def scores(self, covariates, layout, terms, intercepts=None) -> np.ndarray:
        intercepts = self.intercepts if intercepts is None else intercepts
        if intercepts is None:
            raise ValueError("Treatment intercepts are not calibrated")
        columns = [intercepts[k] + linear_predictor(covariates, layout, self.linear[k], terms,
                                                    self.nonlinear[k])
                   for k in range(len(self.linear))]
        columns.append(np.zeros(len(covariates)))
        return np.column_stack(columns)

    def probabilities(self, covariates, layout, terms, intercepts=None) -> np.ndarray:
        scores = self.scores(covariates, layout, terms, intercepts)
        return np.exp(scores - logsumexp(scores, axis=1, keepdims=True))


@dataclass(frozen=True)
class Sim1Config:
    name: str
    scenario: str
    n: int
    ratio: Tuple[int, ...]
    terms: Tuple[QTerm, ...]
    treatment: TreatmentModel
    outcome: OutcomeModel
    layout: CovariateLayout = field(default_factory=CovariateLayout)

    def __post_init__(self):
        if self.n < len(self.ratio):
            raise ValueError("n must be at least the number of treatments")
        if len(self.treatment.linear) != len(self.ratio) - 1:
            raise ValueError("The treatment model needs one linear predictor per non-reference arm")
        for term in self.terms:
            for name in term.columns:
                if name not in self.layout.names:
                    raise ValueError(f"Term refers to unknown covariate {name}")

    @property
    def n_treatments(self) -> int:
        return len(self.ratio)

    @property
    def target_proportions(self) -> np.ndarray:
        ratio = np.asarray(self.ratio, dtype=float)
        return ratio / ratio.sum()

    @property
    def group_sizes(self) -> np.ndarray:
        """
        Nominal group sizes; they sum to n.
        """
        sizes = np.floor(self.target_proportions * self.n).astype(int)
        sizes[np.argmax(self.target_proportions)] += self.n - sizes.sum()
        return sizes

    @property
    def is_calibrated(self) -> bool:
        return self.treatment.intercepts is not None and self.outcome.tau is not None

    @property
    def outcome_covariates(self):
        return None


@dataclass(frozen=True)
class Sim2Config:
    name: str
    level: str
    n: int
    proportions: Tuple[float, ...]
    continuous_means: Tuple[float, ...]
    continuous_variances: Tuple[float, ...]
    categorical_probabilities: Tuple[Tuple[float, ...], ...]
    terms: Tuple[QTerm, ...]
    outcome: OutcomeModel
    outcome_covariates: Optional[Tuple[str, ...]] = None
    layout: CovariateLayout = field(default_factory=CovariateLayout)

    def __post_init__(self):
        if self.level not in SIM2_LEVELS:
            raise ValueError(f"Unknown overlap level {self.level}, expected one of {SIM2_LEVELS}")
        if abs(sum(self.proportions) - 1.0) > 1e-9:
            raise ValueError("Treatment proportions must sum to 1")
        z = len(self.proportions)
        if len(self.continuous_means) != z or len(self.continuous_variances) != z \
                or len(self.categorical_probabilities) != z:
            raise ValueError("Covariate distributions must be given for every treatment")
        if min(self.continuous_variances) <= 0:
            raise ValueError("Covariate variances must be positive")
        for probabilities in self.categorical_probabilities:
            if len(probabilities) != self.layout.n_levels or abs(sum(probabilities) - 1) > 1e-9:
                raise ValueError("Categorical probabilities must cover every level and sum to 1")
        if self.outcome_covariates is not None:
            object.__setattr__(self, "outcome_covariates", tuple(self.outcome_covariates))

    @property
    def n_treatments(self) -> int:
        return len(self.proportions)

    @property
    def target_proportions(self) -> np.ndarray:
        return np.asarray(self.proportions, dtype=float)

    @property
    def is_calibrated(self) -> bool:
        return self.outcome.tau is not None


SimConfig = Union[Sim1Config, Sim2Config]


@dataclass(frozen=True)
class SimData:
    """
    A simulated dataset with its potential-outcome probabilities E[Y(w) | X_i],
    the drawn potential outcomes Y_i(w) and the true GPS.
    """
    dataset: Dataset
    probabilities: np.ndarray
    potential_outcomes: np.ndarray
    true_gps: np.ndarray

    def subset(self, indices) -> "SimData":
        return SimData(self.dataset.subset(indices), self.probabilities[indices],
                       self.potential_outcomes[indices], self.true_gps[indices])


def _draw_categories(probabilities, rng) -> np.ndarray:
    """
    One category per row of the probability matrix, by inversion.
    """
    cumulative = np.cumsum(probabilities, axis=1)
    cumulative[:, -1] = 1.0
    return (rng.random(len(probabilities))[:, None] > cumulative).sum(axis=1)


def _sim1_covariates(config: Sim1Config, n, rng) -> np.ndarray:
    layout = config.layout
    continuous = rng.standard_normal((n, layout.n_continuous))
    categorical = rng.integers(0, layout.n_levels, size=(n, layout.n_categorical))
    return np.hstack([continuous, categorical.astype(float)])


def _finish(config, covariates, treatment, probabilities, true_gps, rng) -> SimData:
    potential = (rng.random(probabilities.shape) < probabilities).astype(np.int64)
    outcome = potential[np.arange(len(treatment)), treatment - 1]
    dataset = Dataset(covariates=covariates, column_meta=config.layout.column_meta(),
                      treatment=treatment, outcome=outcome, n_treatments=config.n_treatments)
    return SimData(dataset, probabilities, potential, true_gps)


def gen_sim1(config: Sim1Config, seed, n=None) -> SimData:
    """
    Covariates, treatment from the multinomial logit and outcomes from the
    parallel response surfaces; Y_i is the drawn Y_i(W_i).
    """
    if not config.is_calibrated:
        raise ValueError(f"Scenario {config.name} is not calibrated")
    n = config.n if n is None else n
    rng = substream(seed, "sim1")
    covariates = _sim1_covariates(config, n, rng)
    gps = config.treatment.probabilities(covariates, config.layout, config.terms)
    treatment = _draw_categories(gps, rng) + 1
    probabilities = config.outcome.probabilities(covariates, config.layout, config.terms)
    return _finish(config, covariates, treatment, probabilities, gps, rng)


def _sim2_covariates(config: Sim2Config, treatment, rng) -> np.ndarray:
    layout = config.layout
    n = len(treatment)
    means = np.asarray(config.continuous_means)[treatment - 1]
    sds = np.sqrt(np.asarray(config.continuous_variances))[treatment - 1]
    continuous = means[:, None] + sds[:, None] * rng.standard_normal((n, layout.n_continuous))
    level_probabilities = np.asarray(config.categorical_probabilities)[treatment - 1]
    categorical = np.column_stack([_draw_categories(level_probabilities, rng)
                                   for _ in range(layout.n_categorical)])
    return np.hstack([continuous, categorical.astype(float)])


def sim2_true_gps(config: Sim2Config, covariates) -> np.ndarray:
    """
    P(W = w | X) proportional to p_w times the covariate density given w.
    """
    layout = config.layout
    continuous = covariates[:, :layout.n_continuous]
    categorical = covariates[:, layout.n_continuous:].astype(np.int64)
    log_terms = []
    for w in range(config.n_treatments):
        sd = np.sqrt(config.continuous_variances[w])
        log_density = norm.logpdf(continuous, config.continuous_means[w], sd).sum(axis=1)
        log_density += np.log(np.asarray(config.categorical_probabilities[w]))[categorical].sum(axis=1)
        log_terms.append(np.log(config.proportions[w]) + log_density)
    log_terms = np.column_stack(log_terms)
    return np.exp(log_terms - logsumexp(log_terms, axis=1, keepdims=True))


def gen_sim2(config: Sim2Config, seed, n=None) -> SimData:
    """
    Treatment with fixed proportions, covariates conditional on treatment and
    outcomes from the response surfaces restricted to outcome_covariates.
    """
    if not config.is_calibrated:
        raise ValueError(f"Scenario {config.name} is not calibrated")
    n = config.n if n is None else n
    rng = substream(seed, "sim2")
    treatment = _draw_categories(np.tile(config.target_proportions, (n, 1)), rng) + 1
    covariates = _sim2_covariates(config, treatment, rng)
    probabilities = config.outcome.probabilities(covariates, config.layout, config.terms,
                                                 config.outcome_covariates)
    return _finish(config, covariates, treatment, probabilities,
                   sim2_true_gps(config, covariates), rng)


def generate(config: SimConfig, seed, n=None) -> SimData:
    if isinstance(config, Sim1Config):
        return gen_sim1(config, seed, n)
    return gen_sim2(config, seed, n)


def with_size(config: SimConfig, n) -> SimConfig:
    return replace(config, n=int(n))


def calibrate_intercepts(config: Sim1Config, target_ratio=None, seed=0,
                         n_draw=CALIBRATION_SIZE, tolerance=1e-3, max_rounds=200):
    """
    Treatment-model intercepts giving the target group proportions, by a
    fixed-point update of the log proportion ratios on the expected assignment
    probabilities of n_draw covariate draws.
    """
    target = np.asarray(target_ratio if target_ratio is not None else config.ratio, dtype=float)
    if len(target) != config.n_treatments or np.any(target <= 0):
        raise ValueError("Target ratio must have one positive entry per treatment")
    target = target / target.sum()
    covariates = _sim1_covariates(config, n_draw, substream(seed, "calibrate", "treatment"))
    intercepts = np.log(target[:-1] / target[-1])
    trace = []
    for round_number in range(max_rounds):
        realized = config.treatment.probabilities(covariates, config.layout, config.terms,
                                                  intercepts).mean(axis=0)
        gap = float(np.max(np.abs(realized - target)))
        trace.append({"round": round_number, "gap": gap})
        if gap < tolerance:
            logging.debug("Treatment intercepts calibrated in %s rounds", round_number + 1)
            return tuple(float(a) for a in intercepts)
        intercepts = intercepts + np.log(target[:-1] / realized[:-1]) - np.log(target[-1] / realized[-1])
    if trace[-1]["gap"] < 0.01:
        return tuple(float(a) for a in intercepts)
    raise ConvergenceError(f"Treatment intercepts did not converge in {max_rounds} rounds "
                           f"(gap {trace[-1]['gap']:.4f})", trace)


def _outcome_population(config: SimConfig, seed, n_draw):
    """
    Covariates and group-membership weights used to calibrate the outcome intercepts.
    """
    rng = substream(seed, "calibrate", "outcome")
    if isinstance(config, Sim1Config):
        covariates = _sim1_covariates(config, n_draw, rng)
        weights = config.treatment.probabilities(covariates, config.layout, config.terms)
    else:
        treatment = _draw_categories(np.tile(config.target_proportions, (n_draw, 1)), rng) + 1
        covariates = _sim2_covariates(config, treatment, rng)
        weights = np.eye(config.n_treatments)[treatment - 1]
    return covariates, weights


def calibrate_outcome_intercepts(config: SimConfig, targets=None, seed=0,
                                 n_draw=CALIBRATION_SIZE, tolerance=1e-4, max_rounds=200):
    """
    Per-arm bisection on tau_w so that the mean of E[Y(w) | X] over the units
    assigned to w matches the target prevalence.
    """
    targets = tuple(targets if targets is not None else config.outcome.targets)
    if len(targets) != config.n_treatments or not all(0 < t < 1 for t in targets):
        raise ValueError("Prevalence targets must be probabilities, one per treatment")
    covariates, weights = _outcome_population(config, seed, n_draw)
    shared = config.outcome.shared(covariates, config.layout, config.terms,
                                   config.outcome_covariates)
    tau = []
    for w, target in enumerate(targets):
        group_weights = weights[:, w] / weights[:, w].sum()
        low, high = -30.0, 30.0
        for _ in range(max_rounds):
            middle = (low + high) / 2.0
            prevalence = float(group_weights @ expit(middle + shared))
            if abs(prevalence - target) < tolerance:
                break
            if prevalence < target:
                low = middle
            else:
                high = middle
        else:
            raise ConvergenceError(f"Outcome intercept of arm {w + 1} did not converge")
        tau.append(middle)
    return tuple(tau)


def _cache_key(config: SimConfig, seed) -> str:
    document = json.dumps({"config": asdict(config), "seed": seed}, sort_keys=True, default=str)
    return hashlib.sha256(document.encode("utf-8")).hexdigest()[:16]


def calibrated(config: SimConfig, seed=0, cache_dir=DEFAULT_CACHE_DIR) -> SimConfig:
    """
    Fill in the intercepts the scenario leaves open. Results are cached on disk
    under a hash of the uncalibrated configuration when cache_dir is set.
    """
    if config.is_calibrated:
        return config
    path = None
    if cache_dir:
        path = os.path.join(cache_dir, f"{config.name}-{_cache_key(config, seed)}.json")
        if os.path.exists(path):
            with open(path, encoding="utf-8") as handle:
                cached = json.load(handle)
            logging.debug("Using cached calibration %s", path)
            return _apply_calibration(config, cached)

    values = {}
    if isinstance(config, Sim1Config) and config.treatment.intercepts is None:
        values["alpha"] = calibrate_intercepts(config, seed=seed)
    staged = _apply_calibration(config, values)
    if config.outcome.tau is None:
        values["tau"] = calibrate_outcome_intercepts(staged, seed=seed)
    logging.info("Calibrated scenario %s: %s", config.name, values)

    if path:
        os.makedirs(cache_dir, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(values, handle)
    return _apply_calibration(config, values)


def _apply_calibration(config: SimConfig, values) -> SimConfig:
    if "alpha" in values:
        config = replace(config, treatment=replace(config.treatment,
                                                   intercepts=tuple(values["alpha"])))
    if "tau" in values:
        config = replace(config, outcome=replace(config.outcome, tau=tuple(values["tau"])))
    return config


def _terms(document):
    return tuple(QTerm(kind=term["kind"], columns=tuple(term["columns"]),
                       level=term.get("level", 2), scale=term.get("scale", 1.0),
                       threshold=term.get("threshold", 0.0)) for term in document)


def _outcome(document) -> OutcomeModel:
    tau = document.get("tau")
    return OutcomeModel(gamma_linear=dict(document["gamma_linear"]),
                        gamma_nonlinear=tuple(document["gamma_nonlinear"]),
                        tau=tuple(tau) if tau is not None else None,
                        targets=tuple(document.get("targets", DEFAULT_OUTCOME_TARGETS)))


def config_from_dict(document) -> SimConfig:
    """
    Build a scenario from its JSON document. A Sim2 document names the Sim1
    scenario whose terms and response surfaces it reuses in `outcome_from`.
    """
    layout = CovariateLayout(**document.get("layout", {}))
    kind = document.get("kind")
    if kind == "sim1":
        treatment = document["treatment"]
        intercepts = treatment.get("intercepts")
        return Sim1Config(
            name=document["name"], scenario=document["scenario"], n=int(document["n"]),
            ratio=tuple(document["ratio"]), terms=_terms(document["terms"]),
            treatment=TreatmentModel(linear=tuple(dict(x) for x in treatment["linear"]),
                                     nonlinear=tuple(tuple(x) for x in treatment["nonlinear"]),
                                     intercepts=tuple(intercepts) if intercepts else None),
            outcome=_outcome(document["outcome"]), layout=layout)
    if kind == "sim2":
        source = document.get("outcome_from")
        base = load_scenario_document(source) if source else document
        outcome = dict(base["outcome"])
        outcome.pop("tau", None)
        outcome.update(document.get("outcome", {}))
        return Sim2Config(
            name=document["name"], level=document["level"], n=int(document["n"]),
            proportions=tuple(document["proportions"]),
            continuous_means=tuple(document["continuous_means"]),
            continuous_variances=tuple(document["continuous_variances"]),
            categorical_probabilities=tuple(tuple(p) for p in document["categorical_probabilities"]),
            terms=_terms(base["terms"]), outcome=_outcome(outcome),
            outcome_covariates=document.get("outcome_covariates"), layout=layout)
    raise ValueError(f"Unknown scenario kind {kind}, expected sim1 or sim2")


def scenario_names():
    folder = resources.files("mtbart.sim").joinpath("scenarios")
    return sorted(entry.name[:-5] for entry in folder.iterdir() if entry.name.endswith(".json"))


def load_scenario_document(name_or_path) -> dict:
    if os.path.exists(name_or_path):
        with open(name_or_path, encoding="utf-8") as handle:
            return json.load(handle)
    if name_or_path not in scenario_names():
        raise ValueError(f"Unknown scenario {name_or_path}; valid names: "
                         f"{', '.join(scenario_names())}")
    text = resources.files("mtbart.sim").joinpath("scenarios", f"{name_or_path}.json") \
        .read_text(encoding="utf-8")
    return json.loads(text)


def load_scenario(name_or_path) -> SimConfig:
    """
    Load a shipped scenario by name (e.g. sim1_III, sim2_weak) or a JSON file by path.
    """
    return config_from_dict(load_scenario_document(name_or_path))
