import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrf.dataset import DataError, Dataset
from ctrf.trees import (
    Criterion,
    DecisionTree,
    Forest,
    ForestHyperparams,
    best_split,
    bootstrap_plan,
    entropy,
    feature_importance,
    fit_forest,
    fit_tree,
    gini_impurity,
    leaf_assignments,
    predict,
)

from .oracles import brute_force_split, entropy_from_counts, random_split_instance


def _stub(feature, threshold, left, right, value, n_features=1, count=None, decrease=None):
    k = len(feature)
    return DecisionTree(np.array(feature), np.array(threshold, float), np.array(left),
                        np.array(right), np.array(value, float),
                        np.array(count if count is not None else [1] * k),
                        np.array(decrease if decrease is not None else [0.0] * k),
                        tuple(range(n_features)), n_features)


def _forest(*trees):
    return Forest(tuple(trees), ForestHyperparams(n_trees=len(trees)))


@pytest.mark.parametrize("labels, expected", [([0, 0, 0, 0], 0.0), ([0, 1], 0.5),
                                              ([1, 1, 1, 0], 0.375)])
def test_gini_examples(labels, expected):
    assert gini_impurity(labels) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("labels, expected", [
    ([0, 1], math.log(2)), ([1, 1, 1], 0.0),
    ([1, 0, 0, 0], -0.25 * math.log(0.25) - 0.75 * math.log(0.75))])
def test_entropy_examples(labels, expected):
    assert entropy(labels) == pytest.approx(expected, abs=1e-9)


def test_impurity_rejects_empty():
    with pytest.raises(ValueError, match="empty node"):
        gini_impurity([])
    with pytest.raises(ValueError, match="empty node"):
        entropy([])


def test_best_split_examples():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    s = best_split(X, [0, 0, 1, 1], [0])
    assert (s.feature_index, s.threshold) == (0, 0.5)
    assert s.impurity_decrease == pytest.approx(0.5)
    assert best_split(np.ones((4, 1)), [0, 1, 0, 1], [0]) is None
    assert best_split(np.arange(4.0)[:, None], [1, 1, 1, 1], [0]) is None


def test_best_split_ties_go_to_lowest_feature_then_threshold():
    X = np.array([[0, 0], [1, 1], [2, 2], [3, 3]], float)
    y = [0, 1, 0, 1]
    s = best_split(X, y, [1, 0])
    oracle = brute_force_split(X, y, [0, 1])
    assert s.feature_index == 0 and s.threshold == oracle[1]


def test_best_split_respects_min_leaf():
    X = np.arange(6.0)[:, None]
    y = [1, 0, 0, 0, 0, 0]
    assert best_split(X, y, [0], min_leaf_samples=1).threshold == 0.5
    assert best_split(X, y, [0], min_leaf_samples=2).threshold == 1.5
    assert best_split(X[:3], y[:3], [0], min_leaf_samples=2) is None


@pytest.mark.parametrize("criterion", ["gini", "entropy"])
def test_best_split_matches_brute_force(criterion):
    rng = np.random.default_rng(7)
    imp = entropy_from_counts if criterion == "entropy" else None
    for _ in range(100):
        X, y = random_split_instance(rng)
        feats = list(range(X.shape[1]))
        ours = best_split(X, y, feats, criterion)
        ref = brute_force_split(X, y, feats, imp) if imp else brute_force_split(X, y, feats)
        if ref is None:
            assert ours is None
        else:
            assert (ours.feature_index, ours.threshold) == (ref[0], ref[1])
            assert abs(ours.impurity_decrease - ref[2]) <= 1e-12


def test_fit_tree_examples():
    t = fit_tree(np.array([[0.0], [1.0], [2.0], [3.0]]), [0, 0, 1, 1])
    assert t.node_count == 3
    assert sorted(t.value[t.leaf_ids]) == [0.0, 1.0]

    pure = fit_tree(np.arange(5.0)[:, None], [1] * 5)
    assert pure.node_count == 1 and pure.value[0] == 1.0

    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], float)
    y = np.array([0, 1, 1, 0])
    xor = fit_tree(X, y, max_nodes=7)
    assert np.array_equal(xor.predict(X), y)


def test_fit_tree_rejects_empty():
    with pytest.raises(DataError):
        fit_tree(np.empty((0, 2)), [])


def test_fit_tree_node_budget_and_subset():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 6))
    y = (X[:, 0] + rng.normal(size=300) > 0).astype(int)
    for budget in (3, 4, 11, 50):
        t = fit_tree(X, y, [1, 3, 4], max_nodes=budget)
        assert t.node_count <= budget
        assert set(t.feature[t.feature >= 0]) <= {1, 3, 4}
        assert np.all(t.impurity_decrease[t.feature >= 0] > 0)


def test_best_first_prefers_size_weighted_gain():
    # root split isolates a big impure block from a small one; the next split
    # should go to the block with the larger n * decrease
    rng = np.random.default_rng(3)
    X = rng.normal(size=(400, 3))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0.5)).astype(int)
    t = fit_tree(X, y, max_nodes=5)
    internal = np.flatnonzero(t.feature >= 0)
    assert internal[0] == 0 and internal.size == 2


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 1)),
                min_size=1, max_size=40))
def test_unbounded_tree_interpolates_consistent_data(rows):
    seen = {}
    for a, b, lab in rows:
        seen.setdefault((a, b), lab)
    X = np.array(list(seen), float)
    y = np.array(list(seen.values()))
    t = fit_tree(X, y, max_nodes=10_000)
    assert np.array_equal(t.predict(X), y)
    # leaves partition the rows
    leaves = leaf_assignments(t, X)
    assert set(leaves) <= set(t.leaf_ids)
    assert sum(t.count[l] for l in set(leaves)) == len(y)


def test_routing_is_left_on_equality():
    t = _stub([0, -1, -1], [0.5, 0, 0], [1, -1, -1], [2, -1, -1], [0.5, 0.1, 0.9])
    assert list(t.apply(np.array([[0.5], [0.50001], [0.2]]))) == [1, 2, 1]
    assert list(leaf_assignments(t, np.array([[0.2], [0.9]]))) == [1, 2]
    assert leaf_assignments(t, np.empty((0, 1))).shape == (0,)


def test_predict_examples():
    leaf = _stub([-1], [0], [-1], [-1], [0.7], n_features=2)
    assert predict(_forest(leaf), [3.0, -1.0]) == pytest.approx(0.7)
    assert list(leaf_assignments(leaf, np.zeros((3, 2)))) == [0, 0, 0]
    a = _stub([-1], [0], [-1], [-1], [0.2])
    b = _stub([-1], [0], [-1], [-1], [0.6])
    assert predict(_forest(a, b), [0.0]) == pytest.approx(0.4)
    assert predict(_forest(b, a), [0.0]) == predict(_forest(a, b), [0.0])
    with pytest.raises(DataError):
        predict(_forest(a), [0.0, 1.0])


def _data(seed=0, n=300, d=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (X[:, 0] - X[:, 1] + rng.normal(size=n) > 0).astype(int)
    return Dataset(X, y, [f"f{i}" for i in range(d)])


def test_fit_forest_is_deterministic():
    hp = ForestHyperparams(n_trees=5, seed=11)
    a, b = fit_forest(_data(), hp), fit_forest(_data(), hp)
    for ta, tb in zip(a.trees, b.trees):
        for name in ("feature", "threshold", "left", "right", "value", "count"):
            assert np.array_equal(getattr(ta, name), getattr(tb, name))
    threaded = fit_forest(_data(), hp, n_jobs=3)
    X = _data(1).features
    assert np.array_equal(a.predict(X), threaded.predict(X))


def test_degenerate_forest_equals_single_tree_on_bootstrap():
    data = _data()
    hp = ForestHyperparams(n_trees=1, bagging_ratio=1.0, feature_ratio=1.0, seed=5)
    rows, feats = bootstrap_plan(hp, data.n_rows, data.n_cols)[0]
    tree = fit_tree(data.features[rows], data.labels[rows], feats)
    X = _data(2).features
    assert np.array_equal(fit_forest(data, hp).predict(X), tree.predict(X))


def test_all_zero_labels_predict_zero():
    d = _data()
    zero = Dataset(d.features, np.zeros(d.n_rows, int), d.feature_names)
    f = fit_forest(zero, ForestHyperparams(n_trees=3))
    assert np.all(f.predict(d.features) == 0.0)
    assert np.array_equal(feature_importance(f), np.zeros(d.n_cols))


def test_feature_subset_is_per_tree_and_sized_by_ratio():
    plan = bootstrap_plan(ForestHyperparams(n_trees=20, feature_ratio=0.3), 50, 20)
    assert all(len(feats) == 6 for _, feats in plan)
    assert len({feats for _, feats in plan}) > 1
    assert all(rows.size == 50 for rows, _ in plan)


def test_feature_importance_examples():
    t = _stub([2, -1, -1], [0.0, 0, 0], [1, -1, -1], [2, -1, -1], [0.5, 0, 1], n_features=4,
              count=[10, 5, 5], decrease=[0.5, 0, 0])
    assert list(feature_importance(_forest(t))) == [0.0, 0.0, 1.0, 0.0]
    imp = feature_importance(fit_forest(_data(), ForestHyperparams(n_trees=10)))
    assert imp.sum() == pytest.approx(1.0) and imp.min() >= 0
    assert imp[:2].sum() > 0.5


def test_hyperparam_validation():
    for bad in (dict(n_trees=0), dict(bagging_ratio=0), dict(feature_ratio=1.5),
                dict(max_nodes=2), dict(min_leaf_samples=0), dict(criterion="mse")):
        with pytest.raises(ValueError):
            ForestHyperparams(**bad)
    hp = ForestHyperparams(criterion="entropy", seed=3)
    assert ForestHyperparams.from_dict(hp.to_dict()) == hp
    assert hp.criterion is Criterion.INFORMATION_GAIN
