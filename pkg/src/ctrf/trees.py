"""Decision trees and bagged forests grown best-first on binary labels.

Trees are stored as flat node arrays. Node 0 is the root; an internal node
sends a row left when ``x[feature] <= threshold``. Leaves carry the mean
label of the (bootstrap) rows that built them.
"""

from __future__ import annotations

import enum
import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import xlogy

from .dataset import Dataset, DataError

# gains below this are treated as zero; also the tie window in split search
_MIN_DECREASE = 1e-12
_TIE_TOL = 1e-12


class Criterion(str, enum.Enum):
    GINI = "gini"
    INFORMATION_GAIN = "entropy"


def _impurity(n_pos, n, criterion: Criterion):
    n_pos = np.asarray(n_pos, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = n_pos / n
    if criterion is Criterion.GINI:
        return 1.0 - q * q - (1.0 - q) * (1.0 - q)
    return -(xlogy(q, q) + xlogy(1.0 - q, 1.0 - q))


def _as_labels(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64).ravel()
    if y.size == 0:
        raise ValueError("empty node")
    return y


def gini_impurity(labels) -> float:
    """Binary Gini impurity ``1 - q**2 - (1-q)**2``; ``q`` is the share of ones."""
    y = _as_labels(labels)
    return float(_impurity(y.sum(), y.size, Criterion.GINI))


def entropy(labels) -> float:
    """Binary entropy of the label mean in nats, zero for pure nodes."""
    y = _as_labels(labels)
    return float(_impurity(y.sum(), y.size, Criterion.INFORMATION_GAIN))


class Split(NamedTuple):
    feature_index: int
    threshold: float
    impurity_decrease: float


def best_split(X, y, feature_subset: Sequence[int], criterion=Criterion.GINI,
               min_leaf_samples: int = 1) -> Split | None:
    """Exhaustive search over midpoints between consecutive distinct values.

    Returns the split with the largest impurity decrease (unweighted by node
    size), or ``None`` when no feasible split strictly reduces impurity. Ties
    go to the lowest feature index, then the lowest threshold.
    """
    criterion = Criterion(criterion)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    feats = np.array(sorted(set(int(f) for f in feature_subset)), dtype=np.intp)
    if n < 2 * min_leaf_samples or n < 2 or feats.size == 0:
        return None
    order = np.argsort(X[:, feats], axis=0)
    return _split_presorted(X, y, feats, order, criterion, min_leaf_samples)


def _split_presorted(X, y, feats, order, criterion, min_leaf_samples, allow_zero=False):
    """Split search given row indices sorted per candidate feature column.

    ``order[:, j]`` lists the node's rows sorted by ``X[:, feats[j]]``. With
    ``allow_zero`` an impure node still gets its best feasible split even when
    no candidate strictly reduces impurity.
    """
    n = order.shape[0]
    total_pos = y[order[:, 0]].sum()
    parent = float(_impurity(total_pos, n, criterion))
    if parent <= _MIN_DECREASE:
        return None
    xs = X[order, feats]
    cum_pos = np.cumsum(y[order], axis=0)
    # candidate cut after sorted position `pos`: feature-major, ascending threshold
    fi, pos = np.nonzero((xs[:-1] < xs[1:]).T)
    n_left = pos + 1
    keep = (n_left >= min_leaf_samples) & (n - n_left >= min_leaf_samples)
    fi, pos, n_left = fi[keep], pos[keep], n_left[keep]
    if fi.size == 0:
        return None
    n_right = n - n_left
    left_pos = cum_pos[pos, fi]
    child = (n_left * _impurity(left_pos, n_left, criterion)
             + n_right * _impurity(total_pos - left_pos, n_right, criterion)) / n
    gain = parent - child
    best = gain.max()
    if not best > _MIN_DECREASE:
        if not allow_zero:
            return None
        gain = np.maximum(gain, 0.0)
        best = gain.max()
    k = int(np.flatnonzero(gain >= best - _TIE_TOL)[0])
    fi, pos = fi[k], pos[k]
    lo, hi = xs[pos, fi], xs[pos + 1, fi]
    threshold = (lo + hi) / 2.0
    if threshold >= hi:  # adjacent floats
        threshold = lo
    return Split(int(feats[fi]), float(threshold), float(gain[k]))


@dataclass(frozen=True)
class DecisionTree:
    """Flat-array binary tree. ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    impurity_decrease: np.ndarray
    feature_subset: tuple[int, ...]
    n_features: int

    def __post_init__(self):
        for name in ("feature", "threshold", "left", "right", "value", "count",
                     "impurity_decrease"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def node_count(self) -> int:
        return self.feature.shape[0]

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.is_leaf)

    def apply(self, X) -> np.ndarray:
        """Leaf node id for every row of ``X``."""
        X = _check_matrix(X, self.n_features)
        node = np.zeros(X.shape[0], dtype=np.intp)
        while True:
            f = self.feature[node]
            idx = np.flatnonzero(f >= 0)
            if idx.size == 0:
                return node
            cur = node[idx]
            go_left = X[idx, f[idx]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def with_values(self, value) -> "DecisionTree":
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.value.shape:
            raise ValueError("value array does not match node count")
        return DecisionTree(self.feature, self.threshold, self.left, self.right,
                            value, self.count, self.impurity_decrease,
                            self.feature_subset, self.n_features)


def _check_matrix(X, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1) if X.size else X.reshape(0, n_features)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise DataError(
            f"expected {n_features} feature columns, got shape {X.shape}")
    return X


def leaf_assignments(tree: DecisionTree, data) -> np.ndarray:
    X = data.features if isinstance(data, Dataset) else data
    return tree.apply(X)


class _Frontier:
    """Max-heap of splittable leaves keyed on size-weighted decrease."""

    def __init__(self):
        self._heap = []

    def push(self, node_id, n_rows, split, rows):
        heapq.heappush(self._heap, (-n_rows * split.impurity_decrease, node_id, split, rows))

    def pop(self):
        _, node_id, split, rows = heapq.heappop(self._heap)
        return node_id, split, rows

    def __bool__(self):
        return bool(self._heap)


def fit_tree(X, y, feature_subset: Sequence[int] | None = None, *,
             max_nodes: int = 100, min_leaf_samples: int = 1,
             criterion=Criterion.GINI) -> DecisionTree:
    """Grow one tree best-first until ``max_nodes`` or nothing is splittable.

    The frontier is ordered by ``n_node * impurity_decrease``. Impure nodes
    with no improving split may still be split at zero gain, last.
    """
    criterion = Criterion(criterion)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("cannot fit a tree on empty data")
    n_features = X.shape[1]
    if feature_subset is None:
        feature_subset = range(n_features)
    subset = tuple(sorted(set(int(f) for f in feature_subset)))
    if any(f < 0 or f >= n_features for f in subset):
        raise DataError("feature subset index out of range")

    feats = np.array(subset, dtype=np.intp)
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    value, count, decrease = [float(y.mean())], [X.shape[0]], [0.0]
    frontier = _Frontier()
    goes_left = np.zeros(X.shape[0], dtype=bool)

    def consider(node_id, order):
        n_node = order.shape[0]
        if n_node < 2 * min_leaf_samples or n_node < 2 or feats.size == 0:
            return
        # zero-gain splits (e.g. the root of XOR) get priority 0, so they are
        # only expanded once every improving split has been used
        split = _split_presorted(X, y, feats, order, criterion, min_leaf_samples,
                                 allow_zero=True)
        if split is not None:
            frontier.push(node_id, n_node, split, order)

    consider(0, np.argsort(X[:, feats], axis=0))
    while frontier and len(feature) + 2 <= max_nodes:
        node_id, split, order = frontier.pop()
        rows = order[:, 0]
        goes_left[rows] = X[rows, split.feature_index] <= split.threshold
        mask = goes_left[order]
        n_left = int(mask[:, 0].sum())
        # boolean selection keeps each column's sort order
        parts = (order.T[mask.T].reshape(feats.size, n_left).T,
                 order.T[~mask.T].reshape(feats.size, -1).T)
        children = []
        for part in parts:
            child_id = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(float(y[part[:, 0]].mean()))
            count.append(part.shape[0])
            decrease.append(0.0)
            children.append((child_id, part))
        feature[node_id] = split.feature_index
        threshold[node_id] = split.threshold
        left[node_id], right[node_id] = children[0][0], children[1][0]
        decrease[node_id] = split.impurity_decrease
        for child_id, part in children:
            consider(child_id, part)

    return DecisionTree(
        feature=np.array(feature, dtype=np.intp),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.intp),
        right=np.array(right, dtype=np.intp),
        value=np.array(value, dtype=np.float64),
        count=np.array(count, dtype=np.int64),
        impurity_decrease=np.array(decrease, dtype=np.float64),
        feature_subset=subset,
        n_features=n_features,
    )


@dataclass(frozen=True)
class ForestHyperparams:
    n_trees: int = 50
    bagging_ratio: float = 1.0
    feature_ratio: float = 0.3
    max_nodes: int = 100
    min_leaf_samples: int = 1
    criterion: Criterion = Criterion.GINI
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0 < self.bagging_ratio <= 1:
            raise ValueError("bagging_ratio must lie in (0, 1]")
        if not 0 < self.feature_ratio <= 1:
            raise ValueError("feature_ratio must lie in (0, 1]")
        if self.max_nodes < 3:
            raise ValueError("max_nodes must be >= 3")
        if self.min_leaf_samples < 1:
            raise ValueError("min_leaf_samples must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "bagging_ratio": self.bagging_ratio,
            "feature_ratio": self.feature_ratio,
            "max_nodes": self.max_nodes,
            "min_leaf_samples": self.min_leaf_samples,
            "criterion": self.criterion.value,
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestHyperparams":
        return cls(**d)


def _ratio_count(ratio: float, n: int) -> int:
    # round first so 0.3 * 20 does not ceil to 7
    return max(1, math.ceil(round(ratio * n, 9)))


def bootstrap_plan(hp: ForestHyperparams, n_rows: int, n_cols: int):
    """Per-tree (bootstrap row indices, sorted feature subset), derived from the seed."""
    n_draw = _ratio_count(hp.bagging_ratio, n_rows)
    n_feat = _ratio_count(hp.feature_ratio, n_cols)
    plan = []
    for child in np.random.SeedSequence(int(hp.seed)).spawn(hp.n_trees):
        rng = np.random.default_rng(child)
        rows = rng.integers(0, n_rows, size=n_draw)
        feats = np.sort(rng.choice(n_cols, size=n_feat, replace=False))
        plan.append((rows, tuple(int(f) for f in feats)))
    return plan


@dataclass(frozen=True)
class Forest:
    trees: tuple[DecisionTree, ...]
    hyperparams: ForestHyperparams
    feature_names: tuple[str, ...] = field(default=())

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def predict(self, X) -> np.ndarray:
        """Mean of per-tree leaf values."""
        X = _check_matrix(X, self.n_features)
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            out += tree.predict(X)
        return out / len(self.trees)

    def apply(self, X) -> np.ndarray:
        """Leaf ids, shape ``(n_rows, n_trees)``."""
        X = _check_matrix(X, self.n_features)
        return np.column_stack([t.apply(X) for t in self.trees]) if self.trees else \
            np.empty((X.shape[0], 0), dtype=np.intp)


def fit_forest(data: Dataset, hp: ForestHyperparams | None = None, n_jobs: int = 1) -> Forest:
    """Bag rows with replacement and draw one feature subset per tree."""
    hp = hp or ForestHyperparams()
    if data.n_rows == 0:
        raise DataError("cannot fit a forest on empty data")
    X, y = data.features, data.require_labels().astype(np.float64)
    plan = bootstrap_plan(hp, data.n_rows, data.n_cols)

    def grow(item):
        rows, feats = item
        return fit_tree(X[rows], y[rows], feats, max_nodes=hp.max_nodes,
                        min_leaf_samples=hp.min_leaf_samples, criterion=hp.criterion)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(grow, plan))
    else:
        trees = [grow(item) for item in plan]
    return Forest(tuple(trees), hp, data.feature_names)


def predict(forest: Forest, point) -> float | np.ndarray:
    """Forest prediction for one point (scalar) or a matrix of rows."""
    arr = np.asarray(point, dtype=np.float64)
    if arr.ndim == 1:
        if arr.shape[0] != forest.n_features:
            raise DataError(
                f"point has {arr.shape[0]} features, forest expects {forest.n_features}")
        return float(forest.predict(arr[None, :])[0])
    return forest.predict(arr)


def tree_importance(tree: DecisionTree) -> np.ndarray:
    """Unnormalised mean-decrease-impurity per feature for one tree."""
    imp = np.zeros(tree.n_features)
    internal = np.flatnonzero(~tree.is_leaf)
    if internal.size:
        weight = tree.count[internal] / tree.count[0]
        np.add.at(imp, tree.feature[internal], weight * tree.impurity_decrease[internal])
    return imp


def feature_importance(forest: Forest) -> np.ndarray:
    """Tree-averaged weighted impurity decrease, normalised to sum to one.

    A forest with no splits at all gets an all-zero vector.
    """
    total = np.mean([tree_importance(t) for t in forest.trees], axis=0)
    s = total.sum()
    return total / s if s > 0 else total
