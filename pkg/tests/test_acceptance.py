"""Acceptance criteria, one test per criterion, one PASS/FAIL line each.

Criteria 1 and 2 run the full desk-scale sweeps (several minutes on one
core); they use every available CPU through the experiment runner.
"""

import math
import os

import numpy as np
import pytest

from ctrf.auction import AuctionConfig, build_auction_datasets, fit_relevance_oracle
from ctrf.baselines import logistic_objective
from ctrf.datagen import GenConfig, generate
from ctrf.dataset import Dataset, Source
from ctrf.experiments import ExperimentConfig, run_auction_experiment, run_simulation
from ctrf.metrics import (
    LN2,
    BinnedDistribution,
    auc,
    cumulative_bias,
    distribution_shift_score,
    js_divergence,
    rig,
)
from ctrf.transfer import calibrate_leaves, fit_ctrf
from ctrf.trees import ForestHyperparams, best_split, entropy, feature_importance, fit_forest, \
    gini_impurity

from .oracles import brute_force_split, pair_count_auc, random_split_instance

WORKERS = os.cpu_count() or 1
FOREST_MODELS = ("CNT_RF", "RND_RF", "COMBINE_RF")


def _by(rows, **match):
    return [r for r in rows if all(r[k] == v for k, v in match.items())]


@pytest.mark.slow
def test_criterion_1_simulation_ordering(tmp_path, record):
    cfg = ExperimentConfig(p_values=[20, 40], inclusion_rates=[0.1, 0.2, 0.3], replications=50,
                           models=["CTRF", *FOREST_MODELS], workers=WORKERS,
                           out=str(tmp_path))
    rows = run_simulation(cfg).rows
    failures, details = [], []
    for p in (20, 40):
        for rate in (0.1, 0.2, 0.3):
            mean = {m: (np.nanmean([r["auc"] for r in _by(rows, p=p, inclusion_rate=rate,
                                                          model=m)]),
                        np.nanmean([r["cumulative_bias"] for r in _by(
                            rows, p=p, inclusion_rate=rate, model=m)]))
                    for m in ("CTRF", *FOREST_MODELS)}
            details.append(f"p={p} r={rate}: " + " ".join(
                f"{m}={a:.3f}/{b:.3f}" for m, (a, b) in mean.items()))
            for m in FOREST_MODELS:
                if mean["CTRF"][0] < mean[m][0]:
                    failures.append(f"AUC p={p} r={rate} CTRF<{m}")
                if mean["CTRF"][1] > mean[m][1]:
                    failures.append(f"bias p={p} r={rate} CTRF>{m}")
    gaps = []
    for rate in (0.1, 0.2, 0.3):
        base = {r["replication"]: r["auc"] for r in _by(rows, p=40, inclusion_rate=rate,
                                                        model="CNT_RF")}
        gaps += [r["auc"] - base[r["replication"]]
                 for r in _by(rows, p=40, inclusion_rate=rate, model="CTRF")]
    frac = float(np.mean(np.array(gaps) > 0))
    if frac < 0.8:
        failures.append(f"CTRF>CNT_RF in {frac:.2f} of p=40 replications")
    print("\n".join(details))
    ok = record("1", not failures,
                f"CTRF-vs-CNT gap>0 frac={frac:.2f}; violations: {failures or 'none'}")
    assert ok, "; ".join(failures)


@pytest.mark.slow
def test_criterion_2_auction(tmp_path, record):
    cfg = ExperimentConfig(experiment="auction", reserves=[0.5, 0.7, 0.9], replications=30,
                           n_l_auctions=5000, n_r_pages=2000, n_test_auctions=5000,
                           models=["CTRF", *FOREST_MODELS], workers=WORKERS,
                           out=str(tmp_path))
    res = run_auction_experiment(cfg)
    rows, imp = res.rows, res.importance_rows

    def mean_auc(model, reserve):
        return float(np.nanmean([r["auc"] for r in _by(rows, reserve=reserve, model=model)]))

    diff = mean_auc("CTRF", 0.5) - mean_auc("CNT_RF", 0.5)
    ok_a = record("2a", abs(diff) < 0.02, f"reserve 0.5 AUC(CTRF)-AUC(CNT_RF)={diff:+.4f}")

    deltas = [r["auc_delta_vs_cnt"] for r in _by(rows, reserve=0.9, model="CTRF")]
    frac = float(np.mean([d > 0 for d in deltas if not math.isnan(d)]))
    ok_b = record("2b", frac >= 0.75,
                  f"reserve 0.9 AUC(CTRF)>AUC(CNT_RF) in {frac:.2f} of seeds "
                  f"(mean delta {np.nanmean(deltas):+.4f})")

    def top5(model):
        hits = [r["position_in_top5"] for r in imp if r["model"] == model and r["reserve"] == 0.5]
        return float(np.mean(hits))

    # importances depend only on training data, so one reserve's rows suffice
    p_cnt, p_ctrf, p_rnd = top5("CNT_RF"), top5("CTRF"), top5("RND_RF")
    ok_c = record("2c", p_ctrf < p_cnt and p_rnd < p_cnt,
                  f"P(position in top5): CTRF={p_ctrf:.2f} RND_RF={p_rnd:.2f} "
                  f"CNT_RF={p_cnt:.2f} COMBINE_RF={top5('COMBINE_RF'):.2f}")
    assert ok_a and ok_b and ok_c


@pytest.mark.slow
def test_criterion_3_stable_feature_recovery(record):
    r_sums, c_sums = [], []
    for seed in range(20):
        a = generate(GenConfig(20, n_target=5000, case="independent", seed=seed), Source.R)
        b = generate(GenConfig(20, n_target=5000, case="s_to_v", inclusion_rate=0.7,
                               seed=10_000 + seed), Source.L)
        hp = ForestHyperparams(seed=seed)
        r_sums.append(feature_importance(fit_forest(a, hp))[:a.feature_names.index("V1")].sum())
        c_sums.append(feature_importance(fit_forest(b, hp))[:b.feature_names.index("V1")].sum())
    r_sums, c_sums = np.array(r_sums), np.array(c_sums)
    mean_ok = r_sums.mean() > 0.8
    beats = bool(np.all(r_sums > c_sums))
    ok = record("3", mean_ok and beats,
                f"S-importance R-forest mean={r_sums.mean():.3f} (min {r_sums.min():.3f}, "
                f"{np.mean(r_sums > 0.8):.2f} of seeds >0.8); CNT mean={c_sums.mean():.3f}; "
                f"R>CNT in {np.mean(r_sums > c_sums):.2f} of seeds")
    assert ok


def test_criterion_4_oracle_equivalences(record):
    rng = np.random.default_rng(2024)
    names = ["a", "b", "c", "d", "e"]
    X = rng.normal(size=(400, 5))
    y = (X[:, 0] - X[:, 2] + rng.normal(size=400) > 0).astype(int)
    r = Dataset(X, y, names, Source.R)
    hp = ForestHyperparams(n_trees=20, seed=9)
    model = fit_ctrf(r, Dataset.empty(names, Source.L), hp)
    oracle, _ = calibrate_leaves(fit_forest(r, hp), r)
    Xt = rng.normal(size=(1000, 5))
    ok_a = np.array_equal(model.predict(Xt), oracle.predict(Xt))

    split_bad = 0
    for _ in range(200):
        Xs, ys = random_split_instance(rng)
        feats = list(range(Xs.shape[1]))
        ours, ref = best_split(Xs, ys, feats), brute_force_split(Xs, ys, feats)
        same = (ours is None and ref is None) or (
            ours is not None and ref is not None and ours.feature_index == ref[0]
            and abs(ours.threshold - ref[1]) <= 1e-12
            and abs(ours.impurity_decrease - ref[2]) <= 1e-12)
        split_bad += not same

    auc_err = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 60))
        s = np.round(rng.random(n), int(rng.integers(1, 3)))
        lab = rng.integers(0, 2, n)
        lab[0], lab[1] = 0, 1
        auc_err = max(auc_err, abs(auc(s, lab) - pair_count_auc(s, lab)))

    ok = record("4", ok_a and split_bad == 0 and auc_err <= 1e-12,
                f"(a) bit-identical={ok_a}; (b) split mismatches={split_bad}/200; "
                f"(c) max AUC error={auc_err:.2e}")
    assert ok


def test_criterion_5_metric_suite(record):
    tol = 1e-9
    checks = [
        gini_impurity([0, 0, 0, 0]) == pytest.approx(0.0, abs=tol),
        gini_impurity([0, 1]) == pytest.approx(0.5, abs=tol),
        gini_impurity([1, 1, 1, 0]) == pytest.approx(0.375, abs=tol),
        entropy([0, 1]) == pytest.approx(math.log(2), abs=tol),
        entropy([1, 1, 1]) == pytest.approx(0.0, abs=tol),
        entropy([1, 0, 0, 0]) == pytest.approx(
            -0.25 * math.log(0.25) - 0.75 * math.log(0.75), abs=tol),
        cumulative_bias(np.full(4, 0.55), [1, 0, 1, 0]) == pytest.approx(0.1, abs=tol),
        cumulative_bias([1, 0, 1], [1, 0, 1]) == pytest.approx(0.0, abs=tol),
        cumulative_bias(np.zeros(4), [1, 0, 0, 0]) == pytest.approx(1.0, abs=tol),
        rig(np.full(4, 0.25), [1, 0, 0, 0]) == pytest.approx(0.0, abs=tol),
        rig([1.0, 0.0, 0.0, 0.0], [1, 0, 0, 0]) > 0.99,
        rig([0.0, 1.0, 1.0, 1.0], [1, 0, 0, 0]) < 0,
    ]
    edges = np.array([0.0, 0.5, 1.0])
    P, Q = BinnedDistribution(edges, [1.0, 0.0]), BinnedDistribution(edges, [0.0, 1.0])
    checks += [js_divergence(P, Q) == pytest.approx(math.log(2), abs=tol),
               js_divergence(P, P) == pytest.approx(0.0, abs=tol)]
    rng = np.random.default_rng(5)
    e = np.linspace(0, 1, 11)
    bounds_bad = 0
    for _ in range(1000):
        a = rng.dirichlet(rng.uniform(0.05, 3, 10))
        b = rng.dirichlet(rng.uniform(0.05, 3, 10))
        A, B = BinnedDistribution(e, a / a.sum()), BinnedDistribution(e, b / b.sum())
        v, w = js_divergence(A, B), js_divergence(B, A)
        bounds_bad += not (0 <= v <= LN2 and abs(v - w) <= tol)
    ok = record("5", all(checks) and bounds_bad == 0,
                f"{sum(checks)}/{len(checks)} examples; JS bound/symmetry violations "
                f"{bounds_bad}/1000")
    assert ok


def test_criterion_6_gradient_check(record):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(50):
        n, d = int(rng.integers(1, 51)), int(rng.integers(1, 11))
        X = rng.normal(size=(n, d))
        yy = rng.integers(0, 2, n)
        w = rng.uniform(0.1, 5, n)
        lam = float(rng.uniform(0, 3))
        params = rng.normal(size=d + 1)
        _, g = logistic_objective(params, X, yy, w, lam)
        h = 1e-6
        fd = np.array([(logistic_objective(params + h * ei, X, yy, w, lam)[0]
                        - logistic_objective(params - h * ei, X, yy, w, lam)[0]) / (2 * h)
                       for ei in np.eye(d + 1)])
        rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-3)
        worst = max(worst, float(rel.max()))
    ok = record("6", worst < 1e-5, f"max relative error {worst:.2e} over 50 instances")
    assert ok


def test_criterion_7_determinism(tmp_path, record):
    hp = {"n_trees": 5, "max_nodes": 31}
    sim = dict(p_values=[20], inclusion_rates=[0.1, 0.9], n_r=200, n_l=400, n_t=300,
               replications=3, hyperparams=hp)
    auc_cfg = dict(experiment="auction", reserves=[0.5, 0.9], n_l_auctions=400, n_r_pages=150,
                   n_test_auctions=400, corpus_size=600, replications=3, hyperparams=hp)
    outputs = {}
    for name, base, files in (("sim", sim, ["simulation_results.csv"]),
                              ("auc", auc_cfg, ["auction_results.csv",
                                                "auction_importance.csv"])):
        for run, workers in (("a", 1), ("b", 1), ("c", 8)):
            out = tmp_path / f"{name}{run}"
            cfg = ExperimentConfig(**base, workers=workers, seed=123, out=str(out))
            (run_simulation if name == "sim" else run_auction_experiment)(cfg)
            outputs[(name, run)] = [(out / f).read_bytes() for f in files]
    same = all(outputs[(n, "a")] == outputs[(n, "b")] == outputs[(n, "c")]
               for n in ("sim", "auc"))
    ok = record("7", same, "result CSVs byte-identical across reruns and workers 1 vs 8"
                if same else "result CSVs differ")
    assert ok


@pytest.mark.slow
def test_criterion_8_shift_monotonicity(record):
    wins, detail = 0, []
    for seed in range(10):
        oracle = fit_relevance_oracle(seed=seed)
        data = build_auction_datasets(oracle, AuctionConfig(n_auctions=5000), (0.55, 0.9), 2000,
                                      5000, seed=1000 + seed)
        l = data.l.to_dataset()
        hi = distribution_shift_score(l, data.tests[0.9].to_dataset())
        lo = distribution_shift_score(l, data.tests[0.55].to_dataset())
        wins += hi > lo
        detail.append(f"{hi:.3f}>{lo:.3f}")
    ok = record("8", wins == 10, f"DS(L,0.9)>DS(L,0.55) in {wins}/10 seeds: {' '.join(detail)}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
