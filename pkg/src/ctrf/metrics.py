"""Evaluation metrics: ranking, calibration bias, information gain, distribution shift."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import rel_entr, xlogy
from scipy.stats import rankdata

from .dataset import Dataset

LN2 = float(np.log(2.0))


class MetricError(ValueError):
    pass


def _binary(labels) -> np.ndarray:
    y = np.asarray(labels).ravel()
    if not np.all((y == 0) | (y == 1)):
        raise MetricError("labels must be 0/1")
    return y.astype(np.float64)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _binary(labels)
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: labels contain a single class")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def cumulative_bias(predictions, labels) -> float:
    """``|mean(pred) - mean(y)| / mean(y)``."""
    p = np.asarray(predictions, dtype=np.float64)
    y = _binary(labels)
    y_bar = y.mean() if y.size else 0.0
    if y_bar <= 0:
        raise MetricError("bias undefined: label mean is zero")
    return float(abs(p.mean() - y_bar) / y_bar)


def binary_entropy(q: float) -> float:
    return float(-(xlogy(q, q) + xlogy(1 - q, 1 - q)))


def log_loss(predictions, labels, eps: float = 1e-6) -> float:
    p = np.clip(np.asarray(predictions, dtype=np.float64), eps, 1 - eps)
    y = _binary(labels)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def rig(predictions, labels, eps: float = 1e-6) -> float:
    """Relative information gain ``(H(y_bar) - logloss) / H(y_bar)``.

    Zero for the base-rate predictor, approaching one for confident correct
    predictions, negative when worse than the base rate.
    """
    y = _binary(labels)
    y_bar = y.mean() if y.size else 0.0
    if not 0 < y_bar < 1:
        raise MetricError("RIG undefined: labels contain a single class")
    h = binary_entropy(y_bar)
    return float((h - log_loss(predictions, y, eps)) / h)


def top_k_rank(importances, k: int) -> np.ndarray:
    """Indices of the top ``k`` features; ties go to the lower index."""
    imp = np.asarray(importances, dtype=np.float64)
    order = np.lexsort((np.arange(imp.size), -imp))
    return order[:k]


def top_k_inclusion(importances_per_replication, feature_index: int, k: int) -> float:
    """Share of replications where ``feature_index`` ranks in the top ``k``."""
    reps = [np.asarray(v, dtype=np.float64) for v in importances_per_replication]
    if not reps:
        raise MetricError("no replications")
    if k > reps[0].size:
        raise MetricError(f"k={k} exceeds {reps[0].size} features")
    hits = [feature_index in top_k_rank(v, k) for v in reps]
    return float(np.mean(hits))


def relative_delta_error(delta_method: float, delta_reference: float) -> float:
    """``|delta_method - delta_reference| / |delta_reference|``."""
    if delta_reference == 0:
        raise MetricError("reference delta is zero")
    return abs(delta_method - delta_reference) / abs(delta_reference)


@dataclass(frozen=True)
class BinnedDistribution:
    bin_edges: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if edges.ndim != 1 or probs.ndim != 1 or edges.size != probs.size + 1:
            raise MetricError("need len(bin_edges) == len(probabilities) + 1")
        if np.any(np.diff(edges) < 0):
            raise MetricError("bin edges must be sorted")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise MetricError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "probabilities", probs)


def equal_width_edges(values, n_bins: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, n_bins + 1)


def bin_feature(values, n_bins: int = 20, edges=None) -> BinnedDistribution:
    """Histogram with add-one smoothing; values outside ``edges`` go to the end bins."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise MetricError("cannot bin an empty sample")
    if edges is None:
        if n_bins < 2:
            raise MetricError("n_bins must be >= 2")
        edges = equal_width_edges(v, n_bins)
    edges = np.asarray(edges, dtype=np.float64)
    k = edges.size - 1
    idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, k - 1)
    counts = np.bincount(idx, minlength=k).astype(np.float64)
    probs = (counts + 1.0) / (v.size + k)
    return BinnedDistribution(edges, probs)


def js_divergence(P: BinnedDistribution, Q: BinnedDistribution) -> float:
    """Jensen-Shannon divergence in nats; zero-probability bins contribute nothing."""
    if P.bin_edges.shape != Q.bin_edges.shape or not np.array_equal(P.bin_edges, Q.bin_edges):
        raise MetricError("distributions use different bin edges")
    p, q = P.probabilities, Q.probabilities
    m = 0.5 * (p + q)
    js = 0.5 * rel_entr(p, m).sum() + 0.5 * rel_entr(q, m).sum()
    return float(min(max(js, 0.0), LN2))


def per_feature_js(factual: Dataset, counterfactual: Dataset, n_bins: int = 20) -> np.ndarray:
    factual.check_schema(counterfactual)
    out = np.empty(factual.n_cols)
    for j in range(factual.n_cols):
        a, b = factual.features[:, j], counterfactual.features[:, j]
        edges = equal_width_edges(np.concatenate([a, b]), n_bins)
        out[j] = js_divergence(bin_feature(a, edges=edges), bin_feature(b, edges=edges))
    return out


def distribution_shift_score(factual: Dataset, counterfactual: Dataset, n_bins: int = 20) -> float:
    """Root mean square of per-feature JS divergences under shared binning."""
    js = per_feature_js(factual, counterfactual, n_bins)
    return float(np.sqrt(np.mean(js ** 2)))


@dataclass
class ReplicationStats:
    mean: float
    sd: float
    count: int

    @classmethod
    def of(cls, values) -> "ReplicationStats":
        v = np.asarray(values, dtype=np.float64)
        v = v[np.isfinite(v)]
        if v.size == 0:
            return cls(float("nan"), float("nan"), 0)
        sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
        return cls(float(v.mean()), sd, int(v.size))


@dataclass
class MetricsReport:
    model_id: str
    auc: float
    cumulative_bias: float
    rig: float
    n_test: int
    replication_stats: dict = field(default_factory=dict)

    @classmethod
    def evaluate(cls, model_id: str, predictions, labels) -> "MetricsReport":
        y = _binary(labels)
        return cls(model_id, _safe(auc, predictions, y), _safe(cumulative_bias, predictions, y),
                   _safe(rig, predictions, y), int(y.size))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["replication_stats"] = {k: asdict(v) if isinstance(v, ReplicationStats) else v
                                  for k, v in self.replication_stats.items()}
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _safe(fn, predictions, labels) -> float:
    try:
        return fn(predictions, labels)
    except MetricError:
        return float("nan")
