"""Comparison models: L2 logistic regression, density-ratio weights, standard forests."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .dataset import Dataset, DataError, concat
from .trees import Forest, ForestHyperparams, fit_forest


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    bias: float
    l2_lambda: float
    converged: bool = True
    n_iter: int = 0

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.weights.shape[0]:
            raise DataError(
                f"expected {self.weights.shape[0]} feature columns, got shape {X.shape}")
        return X @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))


def _normalised_weights(weights, n):
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("sample weights must be positive and finite, one per row")
    return w / w.mean()


def logistic_objective(params, X, y, sample_weight=None, l2_lambda=0.0):
    """Mean weighted log-loss plus ``l2_lambda / (2n) * ||w||**2``.

    ``params`` is ``[w_1, ..., w_d, bias]``; the bias is not penalised.
    Weights are rescaled to mean one, so scaling them changes nothing.
    Returns ``(value, gradient)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    w = _normalised_weights(sample_weight, n)
    coef, bias = params[:-1], params[-1]
    z = X @ coef + bias
    loss = np.logaddexp(0.0, z) - y * z
    value = (w @ loss + 0.5 * l2_lambda * coef @ coef) / n
    resid = w * (expit(z) - y)
    grad = np.empty_like(params, dtype=np.float64)
    grad[:-1] = (X.T @ resid + l2_lambda * coef) / n
    grad[-1] = resid.sum() / n
    return value, grad


def fit_logistic(X, y, sample_weight=None, l2_lambda: float = 1.0,
                 max_iters: int = 500, tolerance: float = 1e-6,
                 return_history: bool = False):
    """Full-batch gradient descent with Armijo backtracking from zero.

    Stops once the gradient max-norm drops below ``tolerance``; running out
    of iterations sets ``converged=False`` instead of raising.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("cannot fit logistic regression on empty data")
    if l2_lambda < 0:
        raise ValueError("l2_lambda must be >= 0")
    params = np.zeros(X.shape[1] + 1)
    value, grad = logistic_objective(params, X, y, sample_weight, l2_lambda)
    history = [value]
    step, converged, it = 1.0, False, 0
    for it in range(1, max_iters + 1):
        if np.max(np.abs(grad)) < tolerance:
            converged = True
            it -= 1
            break
        gg = grad @ grad
        step *= 2.0
        while True:
            cand = params - step * grad
            cand_value, cand_grad = logistic_objective(cand, X, y, sample_weight, l2_lambda)
            if cand_value <= value - 0.5 * step * gg or step < 1e-12:
                break
            step *= 0.5
        if cand_value > value:
            break  # step underflow; cannot make progress
        params, value, grad = cand, cand_value, cand_grad
        history.append(value)
    else:
        converged = bool(np.max(np.abs(grad)) < tolerance)
    model = LogisticModel(params[:-1].copy(), float(params[-1]), float(l2_lambda),
                          converged, it)
    return (model, history) if return_history else model


def density_ratio_weights(train: Dataset, test_features, clip=(1e-3, 1e3),
                          l2_lambda: float = 1.0, max_iters: int = 500,
                          tolerance: float = 1e-6) -> np.ndarray:
    """Importance weights ``p/(1-p)`` from a train-vs-test logistic classifier.

    ``p`` is the classifier's probability that a training row came from the
    test sample.
    """
    Xt = np.asarray(test_features, dtype=np.float64)
    if train.n_rows == 0 or Xt.shape[0] == 0:
        raise DataError("density ratio needs nonempty train and test samples")
    if Xt.ndim != 2 or Xt.shape[1] != train.n_cols:
        raise DataError(
            f"test features have shape {Xt.shape}, train has {train.n_cols} columns")
    X = np.vstack([train.features, Xt])
    domain = np.concatenate([np.zeros(train.n_rows), np.ones(Xt.shape[0])])
    clf = fit_logistic(X, domain, l2_lambda=l2_lambda, max_iters=max_iters,
                       tolerance=tolerance)
    # p / (1 - p) == exp(logit)
    z = clf.decision_function(train.features)
    lo, hi = clip
    return np.clip(np.exp(np.clip(z, -700, 700)), lo, hi)


class Variant(str, enum.Enum):
    CNT_RF = "CNT_RF"
    RND_RF = "RND_RF"
    COMBINE_RF = "COMBINE_RF"


def fit_variant(variant, r_data: Dataset | None, l_data: Dataset | None,
                hp: ForestHyperparams | None = None, n_jobs: int = 1) -> Forest:
    """Standard forests on L-data (CNT), R-data (RND) or both pooled (Combine)."""
    variant = Variant(variant)
    if variant is Variant.CNT_RF:
        if l_data is None or l_data.n_rows == 0:
            raise DataError("CNT_RF needs L-data")
        return fit_forest(l_data, hp, n_jobs=n_jobs)
    if variant is Variant.RND_RF:
        if r_data is None or r_data.n_rows == 0:
            raise DataError("RND_RF needs R-data")
        return fit_forest(r_data, hp, n_jobs=n_jobs)
    if r_data is None or l_data is None or r_data.n_rows == 0 or l_data.n_rows == 0:
        raise DataError("COMBINE_RF needs both R-data and L-data")
    return fit_forest(concat([r_data, l_data]), hp, n_jobs=n_jobs)
