"""Versioned JSON documents for fitted forests and CTRF models.

Schema (``format_version`` 1)::

    {
      "format": "ctrf.forest" | "ctrf.model",
      "format_version": 1,
      "hyperparams": {n_trees, bagging_ratio, feature_ratio, max_nodes,
                      min_leaf_samples, criterion, seed},
      "feature_names": [...],
      "n_features": int,
      "trees": [{"feature_subset": [...], "feature": [...], "threshold": [...],
                 "left": [...], "right": [...], "value": [...], "count": [...],
                 "impurity_decrease": [...]}, ...],
      # ctrf.model only, one entry per tree, aligned with node arrays:
      "calibration": [{"value": [...], "pooled_count": [...]}, ...]
    }

``feature == -1`` marks a leaf. Floats are written with full precision so a
round trip is exact.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .transfer import CtrfModel
from .trees import DecisionTree, Forest, ForestHyperparams

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _tree_to_dict(tree: DecisionTree) -> dict:
    return {
        "feature_subset": list(tree.feature_subset),
        "feature": tree.feature.tolist(),
        "threshold": tree.threshold.tolist(),
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
        "count": tree.count.tolist(),
        "impurity_decrease": tree.impurity_decrease.tolist(),
    }


def _tree_from_dict(d: dict, n_features: int) -> DecisionTree:
    return DecisionTree(
        feature=np.array(d["feature"], dtype=np.intp),
        threshold=np.array(d["threshold"], dtype=np.float64),
        left=np.array(d["left"], dtype=np.intp),
        right=np.array(d["right"], dtype=np.intp),
        value=np.array(d["value"], dtype=np.float64),
        count=np.array(d["count"], dtype=np.int64),
        impurity_decrease=np.array(d["impurity_decrease"], dtype=np.float64),
        feature_subset=tuple(d["feature_subset"]),
        n_features=n_features,
    )


def forest_to_dict(forest: Forest) -> dict:
    return {
        "format": "ctrf.forest",
        "format_version": FORMAT_VERSION,
        "hyperparams": forest.hyperparams.to_dict(),
        "feature_names": list(forest.feature_names),
        "n_features": forest.n_features,
        "trees": [_tree_to_dict(t) for t in forest.trees],
    }


def forest_from_dict(d: dict) -> Forest:
    _check_header(d, "ctrf.forest", "ctrf.model")
    n = int(d["n_features"])
    trees = tuple(_tree_from_dict(t, n) for t in d["trees"])
    return Forest(trees, ForestHyperparams.from_dict(d["hyperparams"]),
                  tuple(d["feature_names"]))


def model_to_dict(model: CtrfModel) -> dict:
    d = forest_to_dict(model.structure)
    d["format"] = "ctrf.model"
    d["calibration"] = [
        {"value": t.value.tolist(), "pooled_count": c.tolist()}
        for t, c in zip(model.calibrated.trees, model.pooled_counts)
    ]
    return d


def model_from_dict(d: dict) -> CtrfModel:
    _check_header(d, "ctrf.model")
    structure = forest_from_dict(d)
    cal = d["calibration"]
    if len(cal) != len(structure.trees):
        raise FormatError("calibration section does not match tree count")
    trees = tuple(t.with_values(c["value"]) for t, c in zip(structure.trees, cal))
    counts = []
    for c in cal:
        arr = np.array(c["pooled_count"], dtype=np.int64)
        arr.setflags(write=False)
        counts.append(arr)
    calibrated = Forest(trees, structure.hyperparams, structure.feature_names)
    return CtrfModel(structure, calibrated, tuple(counts))


def _check_header(d: dict, *formats: str) -> None:
    if d.get("format") not in formats:
        raise FormatError(f"expected format {' or '.join(formats)}, got {d.get('format')!r}")
    if d.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {d.get('format_version')!r}")


def dump(obj, path: str | os.PathLike) -> None:
    """Write a Forest or CtrfModel to ``path``."""
    d = model_to_dict(obj) if isinstance(obj, CtrfModel) else forest_to_dict(obj)
    with open(path, "w") as fh:
        json.dump(d, fh)


def load(path: str | os.PathLike):
    with open(path) as fh:
        d = json.load(fh)
    return model_from_dict(d) if d.get("format") == "ctrf.model" else forest_from_dict(d)
