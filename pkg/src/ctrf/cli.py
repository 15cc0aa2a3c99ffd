"""Command-line entry point: ``ctrf {simulate,auction,train,shift-score,report}``.

Sweep settings come from a JSON config (see ``ExperimentConfig``) and any
flag given on the command line overrides the file. Errors exit with status 2
and a one-line message on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import serialization
from .baselines import density_ratio_weights, fit_logistic, fit_variant
from .dataset import DataError, Dataset, Source, concat, read_csv
from .experiments import (
    MODELS,
    ConfigError,
    ExperimentConfig,
    run_auction_experiment,
    run_simulation,
    summarise_csv,
)
from .metrics import MetricError, MetricsReport, per_feature_js
from .serialization import FormatError
from .transfer import fit_ctrf
from .trees import ForestHyperparams

log = logging.getLogger("ctrf")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_common(p):
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed (64-bit unsigned)")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--out", help="output directory")
    p.add_argument("--replications", type=int)
    p.add_argument("--models", type=_names, help=f"comma list from {','.join(MODELS)}")
    p.add_argument("--n-trees", type=int)
    p.add_argument("--max-nodes", type=int)


def _add_hyperparams(p):
    hp = ForestHyperparams()
    p.add_argument("--n-trees", type=int, default=hp.n_trees)
    p.add_argument("--bagging-ratio", type=float, default=hp.bagging_ratio)
    p.add_argument("--feature-ratio", type=float, default=hp.feature_ratio)
    p.add_argument("--max-nodes", type=int, default=hp.max_nodes)
    p.add_argument("--min-leaf-samples", type=int, default=hp.min_leaf_samples)
    p.add_argument("--criterion", default=hp.criterion.value, choices=["gini", "entropy"])
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctrf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="explicit-mechanism sweep over p and inclusion rate")
    _add_common(sim)
    sim.add_argument("--p", type=_ints, help="comma list of total feature counts")
    sim.add_argument("--inclusion-rates", type=_floats, help="comma list of test rates")

    auc = sub.add_parser("auction", help="simulated ad-auction sweep over reserves")
    _add_common(auc)
    auc.add_argument("--reserves", type=_floats, help="comma list of test reserves")
    auc.add_argument("--n-auctions", type=int, help="logged auctions for L-data")
    auc.add_argument("--n-random-pages", type=int, help="randomized pages for R-data")
    auc.add_argument("--n-test-auctions", type=int)

    tr = sub.add_parser("train", help="fit one model on CSV data and predict a test CSV")
    tr.add_argument("--model", required=True, type=lambda s: s.upper().replace("-", "_"),
                    choices=MODELS)
    tr.add_argument("--r-data", type=Path, help="CSV collected under the randomized policy")
    tr.add_argument("--l-data", type=Path, help="CSV collected under the logging policy")
    tr.add_argument("--test", type=Path, required=True)
    tr.add_argument("--out", type=Path, required=True)
    tr.add_argument("--l2-lambda", type=float, default=1.0)
    _add_hyperparams(tr)

    sh = sub.add_parser("shift-score", help="per-feature JS divergence and RMS shift score")
    sh.add_argument("factual", type=Path)
    sh.add_argument("counterfactual", type=Path)
    sh.add_argument("--bins", type=int, default=20)
    sh.add_argument("--out", type=Path, help="per-feature JS CSV")

    rep = sub.add_parser("report", help="mean/sd per cell and model from a results CSV")
    rep.add_argument("results", type=Path)
    rep.add_argument("--out", type=Path, help="write the summary as CSV")
    return parser


def _read_config(path) -> dict:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return d


def _sweep_config(args, experiment: str) -> ExperimentConfig:
    base = _read_config(args.config) if args.config else {}
    if base.get("experiment", experiment) != experiment:
        raise ConfigError(f"config is for {base['experiment']!r}, not {experiment!r}")
    base["experiment"] = experiment
    overrides = {
        "seed": args.seed, "workers": args.workers, "out": args.out,
        "replications": args.replications, "models": args.models,
        "p_values": getattr(args, "p", None),
        "inclusion_rates": getattr(args, "inclusion_rates", None),
        "reserves": getattr(args, "reserves", None),
        "n_l_auctions": getattr(args, "n_auctions", None),
        "n_r_pages": getattr(args, "n_random_pages", None),
        "n_test_auctions": getattr(args, "n_test_auctions", None),
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    hp = dict(base.get("hyperparams") or ForestHyperparams().to_dict())
    if args.n_trees is not None:
        hp["n_trees"] = args.n_trees
    if args.max_nodes is not None:
        hp["max_nodes"] = args.max_nodes
    base["hyperparams"] = hp
    return ExperimentConfig.from_dict(base)


def _cmd_simulate(args) -> int:
    res = run_simulation(_sweep_config(args, "simulation"))
    print(f"wrote {len(res.rows)} rows to {res.files['results']}")
    return 0


def _cmd_auction(args) -> int:
    res = run_auction_experiment(_sweep_config(args, "auction"))
    print(f"wrote {len(res.rows)} rows to {res.files['results']}")
    return 0


def _train_hyperparams(args) -> ForestHyperparams:
    return ForestHyperparams(args.n_trees, args.bagging_ratio, args.feature_ratio,
                             args.max_nodes, args.min_leaf_samples, args.criterion, args.seed)


def train_predict(model: str, r_data: Dataset | None, l_data: Dataset | None, test: Dataset,
                  hp: ForestHyperparams, l2_lambda: float = 1.0):
    """Fit ``model`` and return ``(predictions, fitted)``.

    ``fitted`` is a forest or CTRF model (serializable) or ``None`` for the
    logistic baselines.
    """
    if model == "CTRF":
        if r_data is None:
            raise DataError("CTRF needs an R-tagged training file (--r-data)")
        fitted = fit_ctrf(r_data, l_data, hp)
        return fitted.predict(test.features), fitted
    if model in ("CNT_RF", "RND_RF", "COMBINE_RF"):
        fitted = fit_variant(model, r_data, l_data, hp)
        return fitted.predict(test.features), fitted
    parts = [d for d in (r_data, l_data) if d is not None]
    if not parts:
        raise DataError("no training data given")
    train = concat(parts)
    weights = None
    if model == "LR_IPW":
        weights = density_ratio_weights(train, test.features, l2_lambda=l2_lambda)
    lr = fit_logistic(train.features, train.require_labels(), weights, l2_lambda)
    return lr.predict_proba(test.features), None


def _cmd_train(args) -> int:
    r = read_csv(args.r_data, source=Source.R) if args.r_data else None
    l = read_csv(args.l_data, source=Source.L) if args.l_data else None
    test = read_csv(args.test, source=Source.TEST, require_labels=False)
    for d in (r, l):
        if d is not None:
            d.check_schema(test)
    pred, fitted = train_predict(args.model, r, l, test, _train_hyperparams(args),
                                 args.l2_lambda)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "prediction"] + (["label"] if test.labels is not None else []))
        for i, p in enumerate(pred):
            extra = [int(test.labels[i])] if test.labels is not None else []
            w.writerow([i, repr(float(p))] + extra)
    if fitted is not None:
        serialization.dump(fitted, args.out / "model.json")
    if test.labels is not None:
        report = MetricsReport.evaluate(args.model, pred, test.labels)
        (args.out / "metrics.json").write_text(report.to_json(indent=2) + "\n")
        print(f"{args.model}: auc={report.auc:.6f} bias={report.cumulative_bias:.6f} "
              f"rig={report.rig:.6f} n={report.n_test}")
    else:
        print(f"{args.model}: wrote {len(pred)} predictions (test file has no labels)")
    return 0


def _cmd_shift(args) -> int:
    a = read_csv(args.factual, require_labels=False)
    b = read_csv(args.counterfactual, require_labels=False)
    js = per_feature_js(a, b, args.bins)
    ds = float(np.sqrt(np.mean(js ** 2)))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "js"])
            for name, v in zip(a.feature_names, js):
                w.writerow([name, repr(float(v))])
    print(f"DS {ds!r}")
    return 0


def _cmd_report(args) -> int:
    summary, cols = summarise_csv(args.results)
    metrics = [c for c in cols if isinstance(summary[0].get(c), dict)]
    keys = [c for c in ("p", "inclusion_rate", "reserve") if c in cols]
    header = keys + ["model"] + [f"{m}_{s}" for m in metrics for s in ("mean", "sd", "count")]
    header += ["auc_minus_cnt_mean", "auc_minus_cnt_sd"]
    lines = []
    for e in summary:
        row = [e[k] for k in keys] + [e["model"]]
        for m in metrics:
            row += [e[m]["mean"], e[m]["sd"], e[m]["count"]]
        d = e.get("auc_minus_cnt")
        row += [d["mean"], d["sd"]] if d else ["", ""]
        lines.append(row)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(header)
        w.writerows(lines)
    finally:
        if args.out:
            out.close()
    return 0


COMMANDS = {"simulate": _cmd_simulate, "auction": _cmd_auction, "train": _cmd_train,
            "shift-score": _cmd_shift, "report": _cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, FormatError, MetricError, ValueError, OSError) as exc:
        print(f"ctrf {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
