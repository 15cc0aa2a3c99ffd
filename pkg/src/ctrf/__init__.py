"""Causal transfer random forests: structure from randomized data, leaves from all data."""

from .dataset import DataError, Dataset, Source, concat, read_csv, write_csv
from .estimators import (
    CausalTransferForest,
    ImportanceWeightedLogisticRegression,
    LogisticRegressionGD,
    RandomForest,
)
from .transfer import CtrfModel, calibrate_forest, fit_ctrf, predict_ctrf
from .trees import (
    Criterion,
    DecisionTree,
    Forest,
    ForestHyperparams,
    best_split,
    feature_importance,
    fit_forest,
    fit_tree,
    predict,
)

__version__ = "0.1.0"

__all__ = [
    "CausalTransferForest", "CtrfModel", "Criterion", "DataError", "Dataset", "DecisionTree",
    "Forest", "ForestHyperparams", "ImportanceWeightedLogisticRegression",
    "LogisticRegressionGD", "RandomForest", "Source", "best_split", "calibrate_forest",
    "concat", "feature_importance", "fit_ctrf", "fit_forest", "fit_tree", "predict",
    "predict_ctrf", "read_csv", "write_csv",
]
