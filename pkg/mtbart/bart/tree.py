"""
Regression trees for the BART sampler.

A Tree is a dictionary of TreeNode objects plus, for every training unit, the
id of the leaf it falls into. Split rules are drawn from a SplitSpace: continuous
columns split at one of a fixed grid of quantile cutpoints (x <= cut goes left),
categorical columns split on a bitmask of levels (levels in the mask go left).

Retained posterior draws are compacted into a Forest of flat arrays, which
predicts new rows by traversing all trees at once.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np


@dataclass(frozen=True)
class SplitOptions:
    """
    The split rules available for the units of one node.
    log_counts[j] is the log number of valid rules on column j (-inf when none).
    """
    valid: np.ndarray
    log_counts: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    present: np.ndarray

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def can_split(self) -> bool:
        return bool(self.valid.any())


class SplitSpace:
    """
    The covariate matrix the trees are grown on and its candidate split rules.
    categorical_levels[j] is the level count of column j, 0 for continuous columns.
    """
    def __init__(self, covariates, categorical_levels, n_cutpoints=100):
        self.X = np.asarray(covariates, dtype=float)
        self.levels = np.asarray(categorical_levels, dtype=np.int64)
        self.n_cutpoints = n_cutpoints
        self.is_categorical = self.levels > 0
        self.continuous = np.flatnonzero(~self.is_categorical)
        self.categorical = np.flatnonzero(self.is_categorical)
        if np.any(self.levels[self.categorical] > 62):
            raise ValueError("Categorical columns are limited to 62 levels")

        quantile_levels = np.arange(1, n_cutpoints + 1) / (n_cutpoints + 1)
        self.grids = {}
        width = 1
        for j in self.continuous:
            grid = np.unique(np.quantile(self.X[:, j], quantile_levels))
            self.grids[j] = grid
            width = max(width, len(grid))
        # padded with +inf so one comparison covers every column
        self.grid_matrix = np.full((len(self.continuous), width), np.inf)
        for row, j in enumerate(self.continuous):
            self.grid_matrix[row, :len(self.grids[j])] = self.grids[j]
        self.max_level = int(self.levels.max()) if len(self.categorical) else 0

    @property
    def n_columns(self) -> int:
        return self.X.shape[1]

    def options(self, indices) -> SplitOptions:
        n_columns = self.n_columns
        valid = np.zeros(n_columns, dtype=bool)
        log_counts = np.full(n_columns, -np.inf)
        lo = np.zeros(n_columns, dtype=np.int64)
        hi = np.zeros(n_columns, dtype=np.int64)
        present = np.zeros(n_columns, dtype=np.int64)
        if len(indices) == 0:
            return SplitOptions(valid, log_counts, lo, hi, present)

        if len(self.continuous):
            values = self.X[np.ix_(indices, self.continuous)]
            mins, maxs = values.min(axis=0), values.max(axis=0)
            # a cut c is valid when min <= c < max: both children get units
            lo_c = (self.grid_matrix < mins[:, None]).sum(axis=1)
            hi_c = (self.grid_matrix < maxs[:, None]).sum(axis=1)
            counts = hi_c - lo_c
            lo[self.continuous] = lo_c
            hi[self.continuous] = hi_c
            valid[self.continuous] = counts > 0
            with np.errstate(divide="ignore"):
                log_counts[self.continuous] = np.log(counts)

        if len(self.categorical):
            codes = self.X[np.ix_(indices, self.categorical)].astype(np.int64)
            seen = (codes[:, :, None] == np.arange(self.max_level)[None, None, :]).any(axis=0)
            n_present = seen.sum(axis=1)
            present[self.categorical] = (seen * (1 << np.arange(self.max_level))).sum(axis=1)
            levels = self.levels[self.categorical]
            ok = n_present >= 2
            valid[self.categorical] = ok
            # nonempty proper subsets of the present levels, absent levels on either side
            log_counts[self.categorical] = np.where(
                ok, np.log(np.maximum(2.0 ** n_present - 2, 1)) + (levels - n_present) * math.log(2),
                -np.inf)
        return SplitOptions(valid, log_counts, lo, hi, present)

    def draw_rule(self, options: SplitOptions, rng):
        """
        Draw a column uniformly among the valid ones, then a rule uniformly
        among that column's valid rules. Returns (column, cut, mask).
        """
        column = int(rng.choice(np.flatnonzero(options.valid)))
        if not self.is_categorical[column]:
            position = int(rng.integers(options.lo[column], options.hi[column]))
            return column, float(self.grids[column][position]), 0
        levels = int(self.levels[column])
        present = [level for level in range(levels) if options.present[column] >> level & 1]
        absent = [level for level in range(levels) if not options.present[column] >> level & 1]
        left_present = int(rng.integers(1, 2 ** len(present) - 1))
        left_absent = int(rng.integers(0, 2 ** len(absent))) if absent else 0
        mask = 0
        for bit, level in enumerate(present):
            if left_present >> bit & 1:
                mask |= 1 << level
        for bit, level in enumerate(absent):
            if left_absent >> bit & 1:
                mask |= 1 << level
        return column, math.nan, mask

    def goes_left(self, column, cut, mask, indices) -> np.ndarray:
        values = self.X[indices, column]
        if self.is_categorical[column]:
            return (mask >> values.astype(np.int64)) & 1 == 1
        return values <= cut

    @staticmethod
    def log_rule_prior(options: SplitOptions, column) -> float:
        return -math.log(options.n_valid) - float(options.log_counts[column])


@dataclass
class TreeNode:
    depth: int
    parent: int = -1
    var: int = -1
    cut: float = math.nan
    mask: int = 0
    left: int = -1
    right: int = -1
    mu: float = 0.0
    options: Optional[SplitOptions] = None

    @property
    def is_leaf(self) -> bool:
        return self.left < 0


class TreePrior:
    """
    A node at depth d splits with probability alpha * (1 + d) ** -beta, or
    never when its units admit no valid rule.
    """
    def __init__(self, alpha=0.95, beta=2.0):
        self.alpha = alpha
        self.beta = beta

    def split_probability(self, depth, options: SplitOptions) -> float:
        if not options.can_split:
            return 0.0
        return self.alpha * (1.0 + depth) ** -self.beta

    def log_leaf(self, depth, options: SplitOptions) -> float:
        return math.log1p(-self.split_probability(depth, options))

    def log_internal(self, depth, options: SplitOptions, column) -> float:
        return (math.log(self.split_probability(depth, options))
                + SplitSpace.log_rule_prior(options, column))


class LeafModel:
    """
    Normal(0, tau^2) leaf values with unit residual variance.
    """
    def __init__(self, tau):
        self.tau = tau
        self.tau2 = tau * tau

    def log_marginal(self, count, total) -> float:
        """
        Log marginal likelihood of a leaf's residuals with mu integrated out,
        dropping the terms that do not depend on the tree.
        """
        shrink = 1.0 + count * self.tau2
        return -0.5 * math.log(shrink) + self.tau2 * total * total / (2.0 * shrink)

    def draw(self, counts, totals, rng) -> np.ndarray:
        shrink = 1.0 + counts * self.tau2
        mean = self.tau2 * totals / shrink
        return mean + np.sqrt(self.tau2 / shrink) * rng.standard_normal(len(counts))


class Tree:
    """
    One tree of the ensemble and the leaf every training unit falls into.
    """
    def __init__(self, n_units, root_options: SplitOptions):
        self.nodes: Dict[int, TreeNode] = {0: TreeNode(depth=0, options=root_options)}
        self.leaf_of = np.zeros(n_units, dtype=np.int64)
        self._free: List[int] = []
        self._next_id = 1

    def _new_id(self) -> int:
        if self._free:
            return self._free.pop()
        node_id = self._next_id
        self._next_id += 1
        return node_id

    @property
    def capacity(self) -> int:
        return self._next_id

    def leaves(self) -> List[int]:
        return sorted(i for i, node in self.nodes.items() if node.is_leaf)

    def internal(self) -> List[int]:
        return sorted(i for i, node in self.nodes.items() if not node.is_leaf)

    def nog(self) -> List[int]:
        """
        Internal nodes whose two children are leaves.
        """
        return [i for i in self.internal()
                if self.nodes[self.nodes[i].left].is_leaf and self.nodes[self.nodes[i].right].is_leaf]

    def growable(self) -> List[int]:
        return [i for i in self.leaves() if self.nodes[i].options.can_split]

    def swap_pairs(self):
        """
        (parent, child) pairs of internal nodes.
        """
        return [(self.nodes[i].parent, i) for i in self.internal() if self.nodes[i].parent >= 0]

    def sibling(self, node_id) -> int:
        parent = self.nodes[self.nodes[node_id].parent]
        return parent.right if parent.left == node_id else parent.left

    def subtree(self, node_id) -> List[int]:
        order = [node_id]
        position = 0
        while position < len(order):
            node = self.nodes[order[position]]
            if not node.is_leaf:
                order += [node.left, node.right]
            position += 1
        return order

    def members(self, node_id) -> np.ndarray:
        node = self.nodes[node_id]
        if node.is_leaf:
            return np.flatnonzero(self.leaf_of == node_id)
        leaves = [i for i in self.subtree(node_id) if self.nodes[i].is_leaf]
        return np.flatnonzero(np.isin(self.leaf_of, leaves))

    def n_leaves(self) -> int:
        return sum(1 for node in self.nodes.values() if node.is_leaf)

    def max_depth(self) -> int:
        return max(node.depth for node in self.nodes.values())

    def grow(self, leaf_id, column, cut, mask, left_indices, right_indices,
             left_options, right_options):
        node = self.nodes[leaf_id]
        left_id, right_id = self._new_id(), self._new_id()
        self.nodes[left_id] = TreeNode(depth=node.depth + 1, parent=leaf_id, options=left_options)
        self.nodes[right_id] = TreeNode(depth=node.depth + 1, parent=leaf_id, options=right_options)
        node.var, node.cut, node.mask = column, cut, mask
        node.left, node.right = left_id, right_id
        self.leaf_of[left_indices] = left_id
        self.leaf_of[right_indices] = right_id
        return left_id, right_id

    def prune(self, node_id, indices):
        node = self.nodes[node_id]
        for child in (node.left, node.right):
            del self.nodes[child]
            self._free.append(child)
        node.var, node.cut, node.mask = -1, math.nan, 0
        node.left = node.right = -1
        self.leaf_of[indices] = node_id

    def leaf_values(self) -> np.ndarray:
        values = np.zeros(self.capacity)
        for i, node in self.nodes.items():
            if node.is_leaf:
                values[i] = node.mu
        return values

    def fitted(self) -> np.ndarray:
        return self.leaf_values()[self.leaf_of]


@dataclass(frozen=True)
class Forest:
    """
    All trees of one posterior draw as flat arrays; var is -1 at leaves.
    """
    var: np.ndarray
    cut: np.ndarray
    mask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    mu: np.ndarray
    roots: np.ndarray
    is_categorical: np.ndarray
    depth: int

    @classmethod
    def from_trees(cls, trees, space: SplitSpace) -> "Forest":
        var, cut, mask, left, right, mu, roots = [], [], [], [], [], [], []
        depth = 0
        for tree in trees:
            order = tree.subtree(0)
            offset = len(var)
            position = {node_id: offset + k for k, node_id in enumerate(order)}
            roots.append(offset)
            for node_id in order:
                node = tree.nodes[node_id]
                var.append(node.var)
                cut.append(node.cut)
                mask.append(node.mask)
                left.append(position[node.left] if node.left >= 0 else -1)
                right.append(position[node.right] if node.right >= 0 else -1)
                mu.append(node.mu if node.is_leaf else 0.0)
                depth = max(depth, node.depth)
        var = np.asarray(var, dtype=np.int64)
        is_categorical = np.zeros(len(var), dtype=bool)
        is_categorical[var >= 0] = space.is_categorical[var[var >= 0]]
        return cls(var=var, cut=np.asarray(cut, dtype=float), mask=np.asarray(mask, dtype=np.int64),
                   left=np.asarray(left, dtype=np.int64), right=np.asarray(right, dtype=np.int64),
                   mu=np.asarray(mu, dtype=float), roots=np.asarray(roots, dtype=np.int64),
                   is_categorical=is_categorical, depth=depth)

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    def predict(self, X) -> np.ndarray:
        """
        Sum of the tree outputs for every row of X.
        """
        X = np.asarray(X, dtype=float)
        node = np.tile(self.roots, (len(X), 1))
        for _ in range(self.depth):
            rows, trees = np.nonzero(self.var[node] >= 0)
            if len(rows) == 0:
                break
            current = node[rows, trees]
            values = X[rows, self.var[current]]
            categorical = self.is_categorical[current]
            codes = np.where(categorical, values, 0).astype(np.int64)
            go_left = np.where(categorical, (self.mask[current] >> codes) & 1 == 1,
                               values <= self.cut[current])
            node[rows, trees] = np.where(go_left, self.left[current], self.right[current])
        return self.mu[node].sum(axis=1)
