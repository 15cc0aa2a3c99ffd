"""scikit-learn compatible wrappers around the forest, CTRF and logistic models.

These give ``fit``/``predict``/``predict_proba``/``get_params`` so the models
drop into pipelines, ``clone`` and model-selection utilities. Labels must be
binary; they are encoded to 0/1 in ``classes_`` order.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .baselines import density_ratio_weights, fit_logistic
from .dataset import Dataset, Source
from .transfer import fit_ctrf
from .trees import ForestHyperparams, feature_importance, fit_forest


def _encode_binary(est, y):
    classes = np.unique(y)
    if classes.size > 2:
        raise ValueError(f"only binary targets are supported, got {classes.size} classes")
    if classes.size == 1:
        # keep a two-class layout so predict_proba always has two columns
        c = classes[0]
        classes = np.array([0, 1]) if c in (0, 1) else np.array([c, c])
    est.classes_ = classes
    return (y == classes[1]).astype(np.int8)


def _names(n):
    return [f"x{i}" for i in range(n)]


class _BinaryProbaMixin:
    def predict_proba(self, X):
        p = self._positive_proba(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        p = self._positive_proba(X)
        return self.classes_[(p > 0.5).astype(int)]


class RandomForest(_BinaryProbaMixin, ClassifierMixin, BaseEstimator):
    """Bagged best-first trees with one feature subset per tree.

    Parameters
    ----------
    n_trees : int, default=50
    bagging_ratio : float, default=1.0
        Bootstrap size as a fraction of the training rows.
    feature_ratio : float, default=0.3
        Fraction of columns each tree may split on.
    max_nodes : int, default=100
        Cap on total nodes per tree.
    min_leaf_samples : int, default=1
    criterion : {"gini", "entropy"}, default="gini"
    random_state : int, default=0
    n_jobs : int, default=1
        Threads used to grow trees; results do not depend on it.
    """

    def __init__(self, n_trees=50, bagging_ratio=1.0, feature_ratio=0.3, max_nodes=100,
                 min_leaf_samples=1, criterion="gini", random_state=0, n_jobs=1):
        self.n_trees = n_trees
        self.bagging_ratio = bagging_ratio
        self.feature_ratio = feature_ratio
        self.max_nodes = max_nodes
        self.min_leaf_samples = min_leaf_samples
        self.criterion = criterion
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _hyperparams(self) -> ForestHyperparams:
        return ForestHyperparams(self.n_trees, self.bagging_ratio, self.feature_ratio,
                                 self.max_nodes, self.min_leaf_samples, self.criterion,
                                 int(self.random_state))

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        y01 = _encode_binary(self, y)
        self.n_features_in_ = X.shape[1]
        self.forest_ = fit_forest(Dataset(X, y01, _names(X.shape[1])), self._hyperparams(),
                                  n_jobs=self.n_jobs)
        self.feature_importances_ = feature_importance(self.forest_)
        return self

    def _positive_proba(self, X):
        check_is_fitted(self, "forest_")
        return self.forest_.predict(check_array(X))

    def apply(self, X):
        check_is_fitted(self, "forest_")
        return self.forest_.apply(check_array(X))


class CausalTransferForest(RandomForest):
    """Forest grown on randomized rows, leaves re-estimated on all rows.

    ``fit`` takes a per-row ``source`` array tagging each row ``"R"``
    (randomized policy) or ``"L"`` (logged policy). Without it every row is
    treated as randomized, which reduces to a standard forest whose leaves
    are re-estimated on the full training set.

    Parameters are those of :class:`RandomForest` plus ``r_weight`` and
    ``l_weight``, per-source weights used only during leaf calibration.
    """

    def __init__(self, n_trees=50, bagging_ratio=1.0, feature_ratio=0.3, max_nodes=100,
                 min_leaf_samples=1, criterion="gini", random_state=0, n_jobs=1,
                 r_weight=1.0, l_weight=1.0):
        super().__init__(n_trees, bagging_ratio, feature_ratio, max_nodes, min_leaf_samples,
                         criterion, random_state, n_jobs)
        self.r_weight = r_weight
        self.l_weight = l_weight

    def fit(self, X, y, *, source=None):
        X, y = check_X_y(X, y)
        y01 = _encode_binary(self, y)
        if source is None:
            is_r = np.ones(X.shape[0], dtype=bool)
        else:
            tags = np.asarray(source).astype(str)
            if tags.shape != (X.shape[0],):
                raise ValueError("source must have one tag per row")
            bad = set(np.unique(tags)) - {"R", "L"}
            if bad:
                raise ValueError(f"unknown source tags {sorted(bad)}; use 'R' or 'L'")
            is_r = tags == "R"
        if not is_r.any():
            raise ValueError("CTRF needs at least one R-tagged row")
        names = _names(X.shape[1])
        r = Dataset(X[is_r], y01[is_r], names, Source.R)
        l = Dataset(X[~is_r], y01[~is_r], names, Source.L) if (~is_r).any() else None
        self.n_features_in_ = X.shape[1]
        self.model_ = fit_ctrf(r, l, self._hyperparams(), self.r_weight, self.l_weight,
                               n_jobs=self.n_jobs)
        self.forest_ = self.model_.structure
        self.feature_importances_ = feature_importance(self.forest_)
        return self

    def _positive_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(check_array(X))


class LogisticRegressionGD(_BinaryProbaMixin, ClassifierMixin, BaseEstimator):
    """L2-penalised logistic regression fit by backtracking gradient descent."""

    def __init__(self, l2_lambda=1.0, max_iters=500, tolerance=1e-6):
        self.l2_lambda = l2_lambda
        self.max_iters = max_iters
        self.tolerance = tolerance

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y)
        y01 = _encode_binary(self, y)
        self.n_features_in_ = X.shape[1]
        self.model_ = fit_logistic(X, y01, sample_weight, self.l2_lambda, self.max_iters,
                                   self.tolerance)
        self.coef_ = self.model_.weights.reshape(1, -1)
        self.intercept_ = np.array([self.model_.bias])
        self.converged_ = self.model_.converged
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.decision_function(check_array(X))

    def _positive_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(check_array(X))


class ImportanceWeightedLogisticRegression(LogisticRegressionGD):
    """Logistic regression reweighted toward a target feature distribution.

    ``fit(X, y, X_target=...)`` estimates density-ratio weights with a
    train-vs-target classifier, clips them to ``weight_clip`` and fits the
    weighted model.
    """

    def __init__(self, l2_lambda=1.0, max_iters=500, tolerance=1e-6, weight_clip=(1e-3, 1e3)):
        super().__init__(l2_lambda, max_iters, tolerance)
        self.weight_clip = weight_clip

    def fit(self, X, y, *, X_target):
        X, y = check_X_y(X, y)
        X_target = check_array(X_target)
        train = Dataset(X, np.zeros(X.shape[0], dtype=np.int8), _names(X.shape[1]))
        self.sample_weight_ = density_ratio_weights(train, X_target, self.weight_clip,
                                                    self.l2_lambda, self.max_iters,
                                                    self.tolerance)
        return super().fit(X, y, sample_weight=self.sample_weight_)
