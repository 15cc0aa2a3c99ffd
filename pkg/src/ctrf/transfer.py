"""Causal transfer forests: structure from randomized data, leaf values from pooled data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, DataError, Source, concat
from .trees import Forest, ForestHyperparams, _check_matrix, fit_forest


@dataclass(frozen=True)
class LeafCalibration:
    calibrated_value: float
    pooled_count: int


@dataclass(frozen=True)
class CtrfModel:
    """A forest whose splits were learned on R-data only.

    ``structure`` keeps the bootstrap leaf values for diagnostics;
    ``calibrated`` is the same forest with leaf values re-estimated on the
    pooled R+L rows. ``pooled_counts[b][node]`` is the number of pooled rows
    routed to that node of tree ``b`` (zero for internal nodes).
    """

    structure: Forest
    calibrated: Forest
    pooled_counts: tuple[np.ndarray, ...]

    @property
    def n_features(self) -> int:
        return self.structure.n_features

    @property
    def feature_names(self):
        return self.structure.feature_names

    @property
    def hyperparams(self) -> ForestHyperparams:
        return self.structure.hyperparams

    @property
    def calibration(self) -> dict[tuple[int, int], LeafCalibration]:
        """``(tree_index, leaf_node_id) -> LeafCalibration`` for every leaf."""
        out = {}
        for b, tree in enumerate(self.calibrated.trees):
            for leaf in tree.leaf_ids:
                out[(b, int(leaf))] = LeafCalibration(
                    float(tree.value[leaf]), int(self.pooled_counts[b][leaf]))
        return out

    def predict(self, X) -> np.ndarray:
        return self.calibrated.predict(X)


def _pooled_weights(pooled: Dataset, weights) -> np.ndarray | None:
    if weights is None:
        return None
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (pooled.n_rows,) or np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("pooled weights must be positive, finite, one per row")
    return w


def calibrate_leaves(forest: Forest, pooled: Dataset, weights=None):
    """Re-estimate every leaf as the mean label of the pooled rows it receives.

    Leaves that receive no pooled rows keep their structure-stage value.
    Returns ``(calibrated_forest, pooled_counts)``.
    """
    if pooled.n_rows == 0:
        raise DataError("calibration data is empty")
    if pooled.n_cols != forest.n_features:
        raise DataError(
            f"calibration data has {pooled.n_cols} columns, forest expects {forest.n_features}")
    if forest.feature_names and pooled.feature_names != forest.feature_names:
        raise DataError("calibration data schema differs from the forest's")
    y = pooled.require_labels().astype(np.float64)
    w = _pooled_weights(pooled, weights)
    trees, counts = [], []
    for tree in forest.trees:
        leaf = tree.apply(pooled.features)
        m = tree.node_count
        n = np.bincount(leaf, minlength=m)
        if w is None:
            num = np.bincount(leaf, weights=y, minlength=m)
            den = n.astype(np.float64)
        else:
            num = np.bincount(leaf, weights=w * y, minlength=m)
            den = np.bincount(leaf, weights=w, minlength=m)
        with np.errstate(invalid="ignore", divide="ignore"):
            value = np.where(n > 0, num / den, tree.value)
        trees.append(tree.with_values(value))
        n.setflags(write=False)
        counts.append(n)
    return Forest(tuple(trees), forest.hyperparams, forest.feature_names), tuple(counts)


def calibrate_forest(forest: Forest, r_data: Dataset, l_data: Dataset | None = None,
                     r_weight: float = 1.0, l_weight: float = 1.0) -> CtrfModel:
    """Attach pooled-data leaf values to an already grown R-data forest."""
    parts = [r_data] if l_data is None or l_data.n_rows == 0 else [r_data, l_data]
    pooled = concat(parts)
    weights = None
    if (r_weight, l_weight) != (1.0, 1.0):
        weights = np.concatenate([np.full(d.n_rows, wt) for d, wt in
                                  zip(parts, (r_weight, l_weight))])
    calibrated, counts = calibrate_leaves(forest, pooled, weights)
    return CtrfModel(forest, calibrated, counts)


def fit_ctrf(r_data: Dataset, l_data: Dataset | None, hp: ForestHyperparams | None = None,
             r_weight: float = 1.0, l_weight: float = 1.0, n_jobs: int = 1) -> CtrfModel:
    """Grow the forest on ``r_data`` alone, then calibrate on ``r_data`` + ``l_data``."""
    if r_data.n_rows == 0:
        raise DataError("R-data is empty")
    if r_data.source is not Source.R:
        raise DataError(f"structure data must be tagged R, got {r_data.source.value}")
    if l_data is not None:
        if l_data.n_rows and l_data.source is not Source.L:
            raise DataError(f"calibration data must be tagged L, got {l_data.source.value}")
        r_data.check_schema(l_data)
    forest = fit_forest(r_data, hp, n_jobs=n_jobs)
    return calibrate_forest(forest, r_data, l_data, r_weight, l_weight)


def predict_ctrf(model: CtrfModel, point) -> float | np.ndarray:
    arr = np.asarray(point, dtype=np.float64)
    if arr.ndim == 1:
        if arr.shape[0] != model.n_features:
            raise DataError(
                f"point has {arr.shape[0]} features, model expects {model.n_features}")
        return float(model.predict(arr[None, :])[0])
    return model.predict(_check_matrix(arr, model.n_features))
