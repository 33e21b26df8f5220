"""
Probit BART sampler.

P(Y = 1 | w, X) = Phi(sum_j g_j(w, X)). Each iteration draws truncated-normal
latents given the current fit, then updates the trees one at a time against
the residual of the others with a Metropolis-Hastings move (grow, prune,
change or swap) and a Gibbs draw of the leaf values. The leaf values are
integrated out of the acceptance ratios.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Tuple

import humanize
import numpy as np
import pandas as pd
from scipy.stats import truncnorm
from tqdm import tqdm

from mtbart.bart.tree import Forest, LeafModel, SplitSpace, Tree, TreePrior
from mtbart.core import ColumnMeta, Dataset
from mtbart.errors import SamplerError
from mtbart.utils.seeding import substream

GROW, PRUNE, CHANGE, SWAP = 0, 1, 2, 3
MOVE_NAMES = ("grow", "prune", "change", "swap")


@dataclass(frozen=True)
class BartConfig:
    n_trees: int = 100
    total_iterations: int = 5000
    burn_in: int = 3000
    k: float = 2.0
    alpha: float = 0.95
    beta: float = 2.0
    proposal: Tuple[float, float, float, float] = (0.25, 0.25, 0.40, 0.10)
    thin: int = 1
    n_cutpoints: int = 100

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("BART needs at least one tree")
        if not 0 <= self.burn_in < self.total_iterations:
            raise ValueError("Burn-in must be smaller than the number of iterations")
        if self.k <= 0:
            raise ValueError("k must be positive")
        if not 0 < self.alpha < 1 or self.beta < 0:
            raise ValueError("Tree prior needs 0 < alpha < 1 and beta >= 0")
        if self.thin < 1 or self.n_cutpoints < 1:
            raise ValueError("thin and n_cutpoints must be positive")
        proposal = tuple(float(p) for p in self.proposal)
        if len(proposal) != 4 or min(proposal) < 0 or abs(sum(proposal) - 1.0) > 1e-9:
            raise ValueError("Proposal mix must be four nonnegative probabilities summing to 1")
        object.__setattr__(self, "proposal", proposal)

    @property
    def leaf_scale(self) -> float:
        """
        Leaf prior standard deviation, 3 / (k sqrt(J)).
        """
        return 3.0 / (self.k * math.sqrt(self.n_trees))

    @property
    def n_retained(self) -> int:
        return len(range(self.burn_in, self.total_iterations, self.thin))


@dataclass
class BartFit:
    """
    Retained posterior draws of the forest and the column layout they were fit on.
    """
    forests: List[Forest]
    space: SplitSpace
    column_meta: Tuple[ColumnMeta, ...]
    n_treatments: int
    config: BartConfig
    trace: pd.DataFrame = field(default_factory=pd.DataFrame)
    elapsed: float = 0.0

    @property
    def n_draws(self) -> int:
        return len(self.forests)


def bart_design(dataset: Dataset, arm=None):
    """
    Covariates with the treatment appended as one categorical column (code w - 1).
    With arm set, every unit gets that treatment.
    """
    treatment = dataset.treatment if arm is None else np.full(dataset.n_units, arm)
    X = np.column_stack([dataset.covariates, treatment - 1]) if dataset.n_covariates \
        else (treatment - 1)[:, None].astype(float)
    levels = [meta.levels if meta.is_categorical else 0 for meta in dataset.column_meta]
    return X.astype(float), np.asarray(levels + [dataset.n_treatments], dtype=np.int64)


class _Context:
    """
    What a Metropolis-Hastings move needs besides the tree.
    """
    def __init__(self, space: SplitSpace, prior: TreePrior, leaf_model: LeafModel, proposal):
        self.space = space
        self.prior = prior
        self.leaf_model = leaf_model
        self.proposal = np.asarray(proposal, dtype=float)

    def move_probabilities(self, n_growable, n_nog, n_swap) -> np.ndarray:
        available = np.array([n_growable > 0, n_nog > 0, n_nog > 0, n_swap > 0], dtype=float)
        weights = self.proposal * available
        total = weights.sum()
        return weights / total if total > 0 else weights

    def score(self, residual, indices) -> float:
        return self.leaf_model.log_marginal(len(indices), float(residual[indices].sum()))


def _counts(tree: Tree):
    return len(tree.growable()), len(tree.nog()), len(tree.swap_pairs())


def _log(value) -> float:
    return math.log(value) if value > 0 else -math.inf


def grow_log_ratio(tree: Tree, leaf_id, column, cut, mask, residual, context: _Context):
    """
    Log Metropolis-Hastings ratio of growing leaf_id with the given rule.
    Returns the ratio and the proposed split.
    """
    node = tree.nodes[leaf_id]
    indices = tree.members(leaf_id)
    goes_left = context.space.goes_left(column, cut, mask, indices)
    left, right = indices[goes_left], indices[~goes_left]
    left_options = context.space.options(left)
    right_options = context.space.options(right)

    n_growable, n_nog, n_swap = _counts(tree)
    has_parent = node.parent >= 0
    sibling_is_leaf = has_parent and tree.nodes[tree.sibling(leaf_id)].is_leaf
    new_growable = n_growable - 1 + left_options.can_split + right_options.can_split
    new_nog = n_nog + 1 - sibling_is_leaf
    new_swap = n_swap + has_parent

    prior = context.prior
    depth = node.depth
    log_ratio = (_log(context.move_probabilities(new_growable, new_nog, new_swap)[PRUNE])
                 - _log(context.move_probabilities(n_growable, n_nog, n_swap)[GROW])
                 + math.log(n_growable) - math.log(new_nog)
                 + math.log(prior.split_probability(depth, node.options))
                 + prior.log_leaf(depth + 1, left_options) + prior.log_leaf(depth + 1, right_options)
                 - prior.log_leaf(depth, node.options)
                 + context.score(residual, left) + context.score(residual, right)
                 - context.score(residual, indices))
    return log_ratio, (left, right, left_options, right_options)


def prune_log_ratio(tree: Tree, node_id, residual, context: _Context):
    """
    Log Metropolis-Hastings ratio of collapsing node_id (whose children are leaves).
    """
    node = tree.nodes[node_id]
    left_node, right_node = tree.nodes[node.left], tree.nodes[node.right]
    left, right = tree.members(node.left), tree.members(node.right)
    indices = np.sort(np.concatenate([left, right]))

    n_growable, n_nog, n_swap = _counts(tree)
    has_parent = node.parent >= 0
    sibling_is_leaf = has_parent and tree.nodes[tree.sibling(node_id)].is_leaf
    new_growable = (n_growable - left_node.options.can_split - right_node.options.can_split
                    + node.options.can_split)
    new_nog = n_nog - 1 + sibling_is_leaf
    new_swap = n_swap - has_parent

    prior = context.prior
    depth = node.depth
    log_ratio = (_log(context.move_probabilities(new_growable, new_nog, new_swap)[GROW])
                 - _log(context.move_probabilities(n_growable, n_nog, n_swap)[PRUNE])
                 + math.log(n_nog) - math.log(new_growable)
                 + prior.log_leaf(depth, node.options)
                 - math.log(prior.split_probability(depth, node.options))
                 - prior.log_leaf(depth + 1, left_node.options)
                 - prior.log_leaf(depth + 1, right_node.options)
                 + context.score(residual, indices)
                 - context.score(residual, left) - context.score(residual, right))
    return log_ratio, indices


def _change_log_ratio(tree: Tree, node_id, column, cut, mask, residual, context: _Context):
    node = tree.nodes[node_id]
    left_node, right_node = tree.nodes[node.left], tree.nodes[node.right]
    indices = tree.members(node_id)
    goes_left = context.space.goes_left(column, cut, mask, indices)
    left, right = indices[goes_left], indices[~goes_left]
    left_options = context.space.options(left)
    right_options = context.space.options(right)

    n_growable, n_nog, n_swap = _counts(tree)
    new_growable = (n_growable - left_node.options.can_split - right_node.options.can_split
                    + left_options.can_split + right_options.can_split)
    prior = context.prior
    depth = node.depth + 1
    # the rule prior and the rule proposal cancel
    log_ratio = (_log(context.move_probabilities(new_growable, n_nog, n_swap)[CHANGE])
                 - _log(context.move_probabilities(n_growable, n_nog, n_swap)[CHANGE])
                 + prior.log_leaf(depth, left_options) + prior.log_leaf(depth, right_options)
                 - prior.log_leaf(depth, left_node.options) - prior.log_leaf(depth, right_node.options)
                 + context.score(residual, left) + context.score(residual, right)
                 - context.score(residual, tree.members(node.left))
                 - context.score(residual, tree.members(node.right)))
    return log_ratio, (left, right, left_options, right_options)


def _partition(tree: Tree, root_id, indices, rules, space: SplitSpace):
    """
    Route indices through the subtree under root_id using the rules in `rules`
    (node id -> (column, cut, mask)) where given and the tree's rules otherwise.
    Returns node id -> member indices, or None when a node ends up empty.
    """
    members = {root_id: indices}
    for node_id in tree.subtree(root_id):
        node = tree.nodes[node_id]
        if node.is_leaf:
            continue
        column, cut, mask = rules.get(node_id, (node.var, node.cut, node.mask))
        current = members[node_id]
        goes_left = space.goes_left(column, cut, mask, current)
        if goes_left.all() or not goes_left.any():
            return None
        members[node.left] = current[goes_left]
        members[node.right] = current[~goes_left]
    return members


def _subtree_log_prior(tree: Tree, members, options, rules, prior: TreePrior) -> float:
    total = 0.0
    for node_id, node_members in members.items():
        node = tree.nodes[node_id]
        if node.is_leaf:
            total += prior.log_leaf(node.depth, options[node_id])
        else:
            column = rules.get(node_id, (node.var,))[0]
            total += prior.log_internal(node.depth, options[node_id], column)
    return total


def _swap_log_ratio(tree: Tree, parent_id, child_id, residual, context: _Context):
    parent, child = tree.nodes[parent_id], tree.nodes[child_id]
    indices = tree.members(parent_id)
    rules = {parent_id: (child.var, child.cut, child.mask),
             child_id: (parent.var, parent.cut, parent.mask)}
    new_members = _partition(tree, parent_id, indices, rules, context.space)
    if new_members is None:
        return -math.inf, None
    old_members = _partition(tree, parent_id, indices, {}, context.space)
    old_options = {i: tree.nodes[i].options for i in old_members}
    new_options = {i: (old_options[i] if i == parent_id else context.space.options(m))
                   for i, m in new_members.items()}

    leaves = [i for i in new_members if tree.nodes[i].is_leaf]
    n_growable, n_nog, n_swap = _counts(tree)
    new_growable = (n_growable - sum(old_options[i].can_split for i in leaves)
                    + sum(new_options[i].can_split for i in leaves))
    prior = context.prior
    log_ratio = (_log(context.move_probabilities(new_growable, n_nog, n_swap)[SWAP])
                 - _log(context.move_probabilities(n_growable, n_nog, n_swap)[SWAP])
                 + _subtree_log_prior(tree, new_members, new_options, rules, prior)
                 - _subtree_log_prior(tree, old_members, old_options, {}, prior)
                 + sum(context.score(residual, new_members[i]) for i in leaves)
                 - sum(context.score(residual, old_members[i]) for i in leaves))
    return log_ratio, (rules, new_members, new_options)


def update_tree(tree: Tree, residual, context: _Context, rng) -> Tuple[int, bool]:
    """
    One Metropolis-Hastings move on the tree structure followed by a Gibbs draw
    of its leaf values. Returns the move tried and whether it was accepted.
    """
    space = context.space
    growable, nog, swap_pairs = tree.growable(), tree.nog(), tree.swap_pairs()
    probabilities = context.move_probabilities(len(growable), len(nog), len(swap_pairs))
    move = -1
    accepted = False
    if probabilities.sum() > 0:
        move = int(rng.choice(4, p=probabilities))

    if move == GROW:
        leaf_id = growable[int(rng.integers(len(growable)))]
        column, cut, mask = space.draw_rule(tree.nodes[leaf_id].options, rng)
        log_ratio, proposal = grow_log_ratio(tree, leaf_id, column, cut, mask, residual, context)
        if math.log(rng.random()) < log_ratio:
            tree.grow(leaf_id, column, cut, mask, *proposal)
            accepted = True
    elif move == PRUNE:
        node_id = nog[int(rng.integers(len(nog)))]
        log_ratio, indices = prune_log_ratio(tree, node_id, residual, context)
        if math.log(rng.random()) < log_ratio:
            tree.prune(node_id, indices)
            accepted = True
    elif move == CHANGE:
        node_id = nog[int(rng.integers(len(nog)))]
        column, cut, mask = space.draw_rule(tree.nodes[node_id].options, rng)
        log_ratio, (left, right, left_options, right_options) = _change_log_ratio(
            tree, node_id, column, cut, mask, residual, context)
        if math.log(rng.random()) < log_ratio:
            node = tree.nodes[node_id]
            node.var, node.cut, node.mask = column, cut, mask
            tree.nodes[node.left].options = left_options
            tree.nodes[node.right].options = right_options
            tree.leaf_of[left] = node.left
            tree.leaf_of[right] = node.right
            accepted = True
    elif move == SWAP:
        parent_id, child_id = swap_pairs[int(rng.integers(len(swap_pairs)))]
        log_ratio, proposal = _swap_log_ratio(tree, parent_id, child_id, residual, context)
        if proposal is not None and math.log(rng.random()) < log_ratio:
            rules, members, options = proposal
            for node_id, (column, cut, mask) in rules.items():
                node = tree.nodes[node_id]
                node.var, node.cut, node.mask = column, cut, mask
            for node_id, node_members in members.items():
                tree.nodes[node_id].options = options[node_id]
                if tree.nodes[node_id].is_leaf:
                    tree.leaf_of[node_members] = node_id
            accepted = True

    if move >= 0 and not math.isfinite(log_ratio) and log_ratio != -math.inf:
        raise SamplerError(f"non-finite {MOVE_NAMES[move]} acceptance ratio",
                           diagnostics={"log_ratio": log_ratio})

    leaves = tree.leaves()
    counts = np.bincount(tree.leaf_of, minlength=tree.capacity)[leaves]
    totals = np.bincount(tree.leaf_of, weights=residual, minlength=tree.capacity)[leaves]
    for leaf_id, value in zip(leaves, context.leaf_model.draw(counts, totals, rng)):
        tree.nodes[leaf_id].mu = float(value)
    return move, accepted


def draw_latents(fit, outcome, rng) -> np.ndarray:
    """
    z ~ N(fit, 1) truncated to (0, inf) when y = 1 and to (-inf, 0) when y = 0.
    """
    lower = np.where(outcome == 1, -fit, -np.inf)
    upper = np.where(outcome == 1, np.inf, -fit)
    return truncnorm.rvs(lower, upper, loc=fit, scale=1.0, size=len(fit), random_state=rng)


def fit_probit_bart(dataset: Dataset, config: BartConfig = BartConfig(), seed=0,
                    progress=False) -> BartFit:
    """
    Run the sampler on (w, X) -> Y and keep the forests of the post burn-in iterations.
    """
    if dataset.outcome is None:
        raise ValueError("BART needs an outcome")
    rng = substream(seed, "bart")
    X, levels = bart_design(dataset)
    space = SplitSpace(X, levels, config.n_cutpoints)
    context = _Context(space, TreePrior(config.alpha, config.beta),
                       LeafModel(config.leaf_scale), config.proposal)
    outcome = dataset.outcome
    n_units = dataset.n_units

    root_options = space.options(np.arange(n_units))
    trees = [Tree(n_units, root_options) for _ in range(config.n_trees)]
    tree_fits = np.zeros((config.n_trees, n_units))
    fit = np.zeros(n_units)

    started = time.monotonic()
    forests = []
    trace = []
    logging.info("Fitting probit BART: %s units, %s trees, %s iterations (%s burn-in)",
                 humanize.intcomma(n_units), config.n_trees,
                 humanize.intcomma(config.total_iterations), humanize.intcomma(config.burn_in))
    for iteration in tqdm(range(config.total_iterations), disable=not progress,
                          desc="BART", unit="it"):
        latents = draw_latents(fit, outcome, rng)
        if not np.all(np.isfinite(latents)):
            raise SamplerError("non-finite latent variable", iteration=iteration,
                               diagnostics={"fit_min": float(fit.min()),
                                            "fit_max": float(fit.max())})
        tried = np.zeros(4, dtype=np.int64)
        accepted = np.zeros(4, dtype=np.int64)
        for j, tree in enumerate(trees):
            residual = latents - fit + tree_fits[j]
            try:
                move, ok = update_tree(tree, residual, context, rng)
            except SamplerError as exc:
                exc.iteration = iteration
                raise
            if move >= 0:
                tried[move] += 1
                accepted[move] += ok
            new_fit = tree.fitted()
            fit += new_fit - tree_fits[j]
            tree_fits[j] = new_fit
        fit = tree_fits.sum(axis=0)

        trace.append({"iteration": iteration,
                      "mean_leaves": float(np.mean([tree.n_leaves() for tree in trees])),
                      **{f"{name}_tried": int(tried[m]) for m, name in enumerate(MOVE_NAMES)},
                      **{f"{name}_accepted": int(accepted[m]) for m, name in enumerate(MOVE_NAMES)}})
        if iteration >= config.burn_in and (iteration - config.burn_in) % config.thin == 0:
            forests.append(Forest.from_trees(trees, space))

    elapsed = time.monotonic() - started
    trace = pd.DataFrame(trace)
    rates = {name: trace[f"{name}_accepted"].sum() / max(trace[f"{name}_tried"].sum(), 1)
             for name in MOVE_NAMES}
    logging.info("BART fit finished in %s, %s draws kept, acceptance %s",
                 humanize.naturaldelta(elapsed), len(forests),
                 ", ".join(f"{name} {rate:.2f}" for name, rate in rates.items()))
    return BartFit(forests=forests, space=space, column_meta=dataset.column_meta,
                   n_treatments=dataset.n_treatments, config=config, trace=trace,
                   elapsed=elapsed)


def with_k(config: BartConfig, k) -> BartConfig:
    return replace(config, k=float(k))
