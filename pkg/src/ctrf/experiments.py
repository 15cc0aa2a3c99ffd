"""Replicated sweeps over the synthetic benchmarks, written as long-format CSV.

Every replication draws its own seeds from ``hash(master_seed, cell, rep)``,
so results do not depend on how many worker processes run them.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datagen
from .auction import AuctionConfig, POSITION, build_auction_datasets, fit_relevance_oracle
from .baselines import density_ratio_weights, fit_logistic, fit_variant
from .dataset import Dataset, concat
from .metrics import MetricsReport, ReplicationStats, top_k_rank
from .transfer import calibrate_forest
from .trees import ForestHyperparams, feature_importance, fit_forest

log = logging.getLogger(__name__)

MODELS = ("CTRF", "CNT_RF", "RND_RF", "COMBINE_RF", "LR", "LR_IPW")
FOREST_MODELS = ("CTRF", "CNT_RF", "RND_RF", "COMBINE_RF")
BASELINE = "CNT_RF"
TOP_K = 5

SIMULATION_FIELDS = ["experiment", "p", "inclusion_rate", "replication", "seed", "config_hash",
                     "model", "auc", "cumulative_bias", "rig", "n_test", "status"]
AUCTION_FIELDS = ["experiment", "reserve", "replication", "seed", "config_hash", "model",
                  "auc", "cumulative_bias", "rig", "auc_delta_vs_cnt", "bias_delta_vs_cnt",
                  "n_test", "status"]
IMPORTANCE_FIELDS = ["experiment", "reserve", "replication", "seed", "config_hash", "model",
                     "position_importance", "position_rank", "position_in_top5"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "simulation"
    # explicit-mechanism sweep
    p_values: list = field(default_factory=lambda: [20, 40, 80])
    inclusion_rates: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5,
                                                           0.6, 0.7, 0.8, 0.9])
    n_r: int = 1000
    n_l: int = 5000
    n_t: int = 2000
    l_inclusion_rate: float = 0.7
    # auction sweep
    reserves: list = field(default_factory=lambda: [0.5, 0.6, 0.7, 0.8, 0.9])
    l_reserve: float = 0.5
    n_l_auctions: int = 25000
    n_r_pages: int = 10000
    n_test_auctions: int = 5000
    ads_per_auction: int = 20
    max_slots: int = 5
    score_noise_sd: float = 0.05
    corpus_size: int = 5000
    n_informative: int = 5
    n_noise: int = 5
    class_sep: float = 2.0
    # shared
    replications: int = 200
    models: list | None = None
    hyperparams: dict = field(default_factory=lambda: ForestHyperparams().to_dict())
    l2_lambda: float = 1.0
    lr_max_iters: int = 500
    lr_tolerance: float = 1e-6
    seed: int = 0
    workers: int = 1
    out: str = "results"

    def __post_init__(self):
        if self.experiment not in ("simulation", "auction"):
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.models is None:
            self.models = list(MODELS if self.experiment == "simulation" else FOREST_MODELS)
        self.models = [m.upper().replace("-", "_") for m in self.models]
        unknown = set(self.models) - set(MODELS)
        if unknown:
            raise ConfigError(f"unknown models {sorted(unknown)}; choose from {list(MODELS)}")
        if not self.models:
            raise ConfigError("select at least one model")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        for r in self.inclusion_rates:
            if not 0 < r < 1:
                raise ConfigError(f"inclusion rate {r} outside (0, 1)")
        for r in self.reserves:
            if not 0 <= r <= 1:
                raise ConfigError(f"reserve {r} outside [0, 1]")
        try:
            self.forest_hyperparams()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad hyperparams: {exc}") from None

    def forest_hyperparams(self, seed: int = 0) -> ForestHyperparams:
        return ForestHyperparams(**{**self.hyperparams, "seed": seed})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from None

    def config_hash(self) -> str:
        """Digest of everything that affects results (not workers or output dir)."""
        d = self.to_dict()
        d.pop("workers")
        d.pop("out")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def derive_seed(master: int, *coords) -> int:
    """64-bit seed from the master seed and cell coordinates."""
    blob = json.dumps([int(master)] + [repr(c) for c in coords]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_rows(path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row.get(k, "")) for k in fields])


def _run_units(fn, units, workers):
    if workers <= 1 or len(units) <= 1:
        return [fn(u) for u in units]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, units))


def _evaluate(model_id, predict, test: Dataset) -> tuple[MetricsReport, str]:
    try:
        pred = predict(test.features)
    except Exception as exc:  # recorded per row; the sweep continues
        log.warning("model %s failed: %s", model_id, exc)
        nan = float("nan")
        return MetricsReport(model_id, nan, nan, nan, test.n_rows), f"error: {exc}"
    rep = MetricsReport.evaluate(model_id, pred, test.require_labels())
    status = "ok" if all(np.isfinite([rep.auc, rep.cumulative_bias, rep.rig])) else "degenerate"
    return rep, status


def _fit_forests(cfg: ExperimentConfig, r: Dataset, l: Dataset, hp: ForestHyperparams) -> dict:
    """Fitted predictors and structure forests for the selected forest models."""
    fitted = {}
    need_rnd = {"CTRF", "RND_RF"} & set(cfg.models)
    rnd = fit_forest(r, hp) if need_rnd else None
    if "CTRF" in cfg.models:
        # CTRF shares RND_RF's structure by construction (same data, same seed)
        fitted["CTRF"] = calibrate_forest(rnd, r, l)
    if "RND_RF" in cfg.models:
        fitted["RND_RF"] = rnd
    for name in ("CNT_RF", "COMBINE_RF"):
        if name in cfg.models:
            fitted[name] = fit_variant(name, r, l, hp)
    return fitted


def _structure(model):
    return getattr(model, "structure", model)


def _fit_lr(cfg, train: Dataset, weights=None):
    return fit_logistic(train.features, train.require_labels(), weights, cfg.l2_lambda,
                        cfg.lr_max_iters, cfg.lr_tolerance)


def _lr_predictors(cfg, pooled: Dataset, test: Dataset, which=("LR", "LR_IPW")) -> dict:
    out = {}
    if "LR" in which and "LR" in cfg.models:
        out["LR"] = _fit_lr(cfg, pooled).predict_proba
    if "LR_IPW" in which and "LR_IPW" in cfg.models:
        w = density_ratio_weights(pooled, test.features, l2_lambda=cfg.l2_lambda,
                                  max_iters=cfg.lr_max_iters, tolerance=cfg.lr_tolerance)
        out["LR_IPW"] = _fit_lr(cfg, pooled, w).predict_proba
    return out


def _simulation_unit(args):
    cfg, p, rep = args
    chash = cfg.config_hash()
    seed = derive_seed(cfg.seed, "simulation", p, rep)
    sizes = datagen.SimulationSizes(cfg.n_r, cfg.n_l, cfg.n_t, cfg.l_inclusion_rate)
    r, l = datagen.build_training_datasets(p, seed, sizes)
    hp = cfg.forest_hyperparams(derive_seed(cfg.seed, "simulation-forest", p, rep))
    forests = _fit_forests(cfg, r, l, hp)
    pooled = concat([r, l])
    fixed = {name: m.predict for name, m in forests.items()}
    fixed.update(_lr_predictors(cfg, pooled, pooled, which=("LR",)))
    rows = []
    for rate in cfg.inclusion_rates:
        test = datagen.build_test_dataset(
            p, rate, derive_seed(cfg.seed, "simulation-test", p, rate, rep), cfg.n_t)
        # IPW weights target each test distribution separately
        predictors = {**fixed, **_lr_predictors(cfg, pooled, test, which=("LR_IPW",))}
        for name in cfg.models:
            rep_metrics, status = _evaluate(name, predictors[name], test)
            rows.append(dict(experiment="simulation", p=p, inclusion_rate=float(rate),
                             replication=rep, seed=seed, config_hash=chash, model=name,
                             auc=rep_metrics.auc, cumulative_bias=rep_metrics.cumulative_bias,
                             rig=rep_metrics.rig, n_test=rep_metrics.n_test, status=status))
    return rows


def _summarise(rows, cell_keys, metrics):
    cells = {}
    for row in rows:
        key = tuple(row[k] for k in cell_keys)
        cells.setdefault(key, {}).setdefault(row["model"], []).append(row)
    summary = []
    for key in sorted(cells):
        by_model = cells[key]
        base = {r["replication"]: r for r in by_model.get(BASELINE, [])}
        for model in sorted(by_model):
            entry = dict(zip(cell_keys, key))
            entry["model"] = model
            for m in metrics:
                entry[m] = dataclasses.asdict(ReplicationStats.of([r[m] for r in by_model[model]]))
            if base and model != BASELINE:
                paired = [r["auc"] - base[r["replication"]]["auc"] for r in by_model[model]
                          if r["replication"] in base]
                entry["auc_minus_cnt"] = dataclasses.asdict(ReplicationStats.of(paired))
            summary.append(entry)
    return summary


@dataclass
class ExperimentResult:
    rows: list
    summary: list
    files: dict
    importance_rows: list = field(default_factory=list)


def _sort_rows(rows, keys):
    order = {m: i for i, m in enumerate(MODELS)}
    return sorted(rows, key=lambda r: tuple(r[k] for k in keys) + (order[r["model"]],))


def run_simulation(cfg: ExperimentConfig) -> ExperimentResult:
    units = [(cfg, p, rep) for p in cfg.p_values for rep in range(cfg.replications)]
    rows = [row for chunk in _run_units(_simulation_unit, units, cfg.workers) for row in chunk]
    rows = _sort_rows(rows, ("p", "inclusion_rate", "replication"))
    summary = _summarise(rows, ("p", "inclusion_rate"), ("auc", "cumulative_bias", "rig"))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "simulation_results.csv"
    json_path = out / "simulation_summary.json"
    write_rows(csv_path, SIMULATION_FIELDS, rows)
    _write_json(json_path, {"config": cfg.to_dict(), "config_hash": cfg.config_hash(),
                            "summary": summary})
    return ExperimentResult(rows, summary, {"results": str(csv_path), "summary": str(json_path)})


def _auction_unit(args):
    cfg, rep = args
    chash = cfg.config_hash()
    seed = derive_seed(cfg.seed, "auction", rep)
    oracle_seed = derive_seed(cfg.seed, "auction-oracle", rep)
    data_seed = derive_seed(cfg.seed, "auction-data", rep)
    oracle = fit_relevance_oracle(cfg.corpus_size, cfg.n_informative, cfg.n_noise,
                                  cfg.class_sep, cfg.forest_hyperparams(), oracle_seed)
    cfg_l = AuctionConfig(cfg.ads_per_auction, cfg.max_slots, cfg.l_reserve, cfg.n_l_auctions,
                          cfg.score_noise_sd)
    data = build_auction_datasets(oracle, cfg_l, tuple(cfg.reserves), cfg.n_r_pages,
                                  cfg.n_test_auctions, data_seed)
    r, l = data.r.to_dataset(), data.l.to_dataset()
    hp = cfg.forest_hyperparams(derive_seed(cfg.seed, "auction-forest", rep))
    forests = _fit_forests(cfg, r, l, hp)
    pooled = concat([r, l])
    position = r.feature_names.index(POSITION)
    importance = {name: feature_importance(_structure(m)) for name, m in forests.items()}

    rows, imp_rows = [], []
    for reserve in cfg.reserves:
        test = data.tests[float(reserve)].to_dataset()
        predictors = {name: m.predict for name, m in forests.items()}
        if {"LR", "LR_IPW"} & set(cfg.models) and test.n_rows:
            predictors.update(_lr_predictors(cfg, pooled, test))
        reports = {}
        for name in cfg.models:
            if test.n_rows == 0:
                nan = float("nan")
                reports[name] = (MetricsReport(name, nan, nan, nan, 0), "empty test set")
            else:
                reports[name] = _evaluate(name, predictors[name], test)
        base = reports.get(BASELINE, (None,))[0]
        for name in cfg.models:
            rm, status = reports[name]
            rows.append(dict(
                experiment="auction", reserve=float(reserve), replication=rep, seed=seed,
                config_hash=chash, model=name, auc=rm.auc, cumulative_bias=rm.cumulative_bias,
                rig=rm.rig,
                auc_delta_vs_cnt=rm.auc - base.auc if base else float("nan"),
                bias_delta_vs_cnt=base.cumulative_bias - rm.cumulative_bias if base
                else float("nan"),
                n_test=rm.n_test, status=status))
            if name in importance:
                imp = importance[name]
                rank = int(np.flatnonzero(top_k_rank(imp, imp.size) == position)[0]) + 1
                imp_rows.append(dict(
                    experiment="auction", reserve=float(reserve), replication=rep, seed=seed,
                    config_hash=chash, model=name, position_importance=float(imp[position]),
                    position_rank=rank, position_in_top5=int(rank <= TOP_K)))
            else:
                imp_rows.append(dict(
                    experiment="auction", reserve=float(reserve), replication=rep, seed=seed,
                    config_hash=chash, model=name, position_importance=float("nan"),
                    position_rank="", position_in_top5=""))
    return rows, imp_rows


def run_auction_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    units = [(cfg, rep) for rep in range(cfg.replications)]
    results = _run_units(_auction_unit, units, cfg.workers)
    rows = _sort_rows([r for chunk, _ in results for r in chunk], ("reserve", "replication"))
    imp_rows = _sort_rows([r for _, chunk in results for r in chunk], ("reserve", "replication"))
    summary = _summarise(rows, ("reserve",), ("auc", "cumulative_bias", "rig",
                                              "auc_delta_vs_cnt", "bias_delta_vs_cnt"))
    top5 = {}
    for row in imp_rows:
        if row["position_in_top5"] != "":
            top5.setdefault((row["reserve"], row["model"]), []).append(row["position_in_top5"])
    for entry in summary:
        hits = top5.get((entry["reserve"], entry["model"]))
        entry["position_top5_probability"] = float(np.mean(hits)) if hits else None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {"results": str(out / "auction_results.csv"),
             "importance": str(out / "auction_importance.csv"),
             "summary": str(out / "auction_summary.json")}
    write_rows(files["results"], AUCTION_FIELDS, rows)
    write_rows(files["importance"], IMPORTANCE_FIELDS, imp_rows)
    _write_json(files["summary"], {"config": cfg.to_dict(), "config_hash": cfg.config_hash(),
                                   "summary": summary})
    return ExperimentResult(rows, summary, files, imp_rows)


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def summarise_csv(path) -> tuple[list, list]:
    """Per-cell mean/sd/count from a results CSV written by either sweep."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        raw = list(reader)
        fields = reader.fieldnames or []
    if not raw:
        raise ConfigError(f"{path}: no result rows")
    if "inclusion_rate" in fields:
        cell = ("p", "inclusion_rate")
    elif "reserve" in fields:
        cell = ("reserve",)
    else:
        raise ConfigError(f"{path}: not a results file")
    metrics = [m for m in ("auc", "cumulative_bias", "rig", "auc_delta_vs_cnt",
                           "bias_delta_vs_cnt") if m in fields]
    rows = []
    for r in raw:
        row = {k: r[k] for k in cell}
        row["model"] = r["model"]
        row["replication"] = int(r["replication"])
        for m in metrics:
            row[m] = float(r[m]) if r[m] != "" else float("nan")
        rows.append(row)
    return _summarise(rows, cell, metrics), list(cell) + ["model"] + metrics
