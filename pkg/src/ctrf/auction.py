"""Simulated ad auctions where on-page position is spuriously tied to relevance.

Ads come from a synthetic classification corpus scored by a frozen relevance
forest. Logged pages filter ads by a noisy relevance reserve and rank the
survivors into slots; randomized pages show random ads in random slots. The
click law depends on true relevance only, never on position.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, Source
from .datagen import as_seed_sequence, gen_classification
from .trees import Forest, ForestHyperparams, fit_forest

POSITION = "position"


@dataclass(frozen=True)
class AuctionConfig:
    ads_per_auction: int = 20
    max_slots: int = 5
    relevance_reserve: float = 0.5
    n_auctions: int = 5000
    score_noise_sd: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.max_slots < 1 or self.ads_per_auction < 1:
            raise ValueError("need at least one slot and one candidate")
        if not 0 <= self.relevance_reserve <= 1:
            raise ValueError("relevance_reserve must lie in [0, 1]")


@dataclass(frozen=True)
class RelevanceOracle:
    forest: Forest
    corpus: Dataset
    relevance: np.ndarray  # oracle score for every corpus ad

    def score(self, X) -> np.ndarray:
        return self.forest.predict(X)


def fit_relevance_oracle(n: int = 5000, n_informative: int = 5, n_noise: int = 5,
                         class_sep: float = 2.0, hp: ForestHyperparams | None = None,
                         seed=0) -> RelevanceOracle:
    """Fit the ground-truth relevance forest on a fresh classification corpus."""
    data_seq, forest_seq = as_seed_sequence(seed).spawn(2)
    corpus = gen_classification(n, n_informative, n_noise, class_sep,
                                np.random.default_rng(data_seq))
    if hp is None:
        hp = ForestHyperparams()
    hp = ForestHyperparams(**{**hp.to_dict(),
                              "seed": int(forest_seq.generate_state(1, np.uint64)[0])})
    forest = fit_forest(corpus, hp)
    return RelevanceOracle(forest, corpus, forest.predict(corpus.features))


def run_auction(scores, cfg: AuctionConfig, rng) -> np.ndarray:
    """Candidate indices that win slots, best first (slot 1 is index 0).

    Each score gets Gaussian noise; candidates whose noisy score is below the
    reserve are dropped and the rest ranked by noisy score. Returns an empty
    array when nothing clears the reserve.
    """
    p = np.asarray(scores, dtype=np.float64)
    noisy = p + cfg.score_noise_sd * rng.standard_normal(p.shape[0])
    eligible = np.flatnonzero(noisy >= cfg.relevance_reserve)
    ranked = eligible[np.argsort(-noisy[eligible], kind="stable")]
    return ranked[:cfg.max_slots]


def simulate_clicks(relevance, rng) -> np.ndarray:
    """Bernoulli click per ad; with several hits keep one chosen uniformly."""
    p = np.asarray(relevance, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty page")
    hits = np.flatnonzero(rng.random(p.size) < p)
    clicked = np.zeros(p.size, dtype=np.int8)
    if hits.size:
        clicked[hits[rng.integers(hits.size)]] = 1
    return clicked


@dataclass
class ImpressionTable:
    relevance_features: np.ndarray
    relevance: np.ndarray
    position: np.ndarray
    clicked: np.ndarray
    page_id: np.ndarray
    feature_names: tuple[str, ...]
    source: Source = Source.TEST
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.clicked.shape[0]

    @property
    def n_pages(self) -> int:
        return int(np.unique(self.page_id).size)

    def to_dataset(self) -> Dataset:
        """Relevance features plus position; the oracle score is withheld."""
        X = np.column_stack([self.relevance_features, self.position.astype(np.float64)])
        return Dataset(X, self.clicked, self.feature_names + (POSITION,), self.source)

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(self.feature_names) + [POSITION, "clicked", "page_id", "source"])
            for i in range(len(self)):
                w.writerow([repr(float(v)) for v in self.relevance_features[i]]
                           + [int(self.position[i]), int(self.clicked[i]),
                              int(self.page_id[i]), self.source.value])


def _table(oracle: RelevanceOracle, pages, source: Source) -> ImpressionTable:
    ads = [np.asarray(a) for a, _, _ in pages]
    idx = np.concatenate(ads) if ads else np.empty(0, dtype=np.intp)
    pos = np.concatenate([p for _, p, _ in pages]) if pages else np.empty(0, dtype=np.int64)
    clk = np.concatenate([c for _, _, c in pages]) if pages else np.empty(0, dtype=np.int8)
    page_id = np.repeat(np.arange(len(pages)), [a.size for a in ads]) if pages else \
        np.empty(0, dtype=np.int64)
    return ImpressionTable(oracle.corpus.features[idx], oracle.relevance[idx], pos, clk,
                           page_id, oracle.corpus.feature_names, source)


def simulate_logged(oracle: RelevanceOracle, cfg: AuctionConfig, rng=None,
                    source=Source.L) -> ImpressionTable:
    """Run ``cfg.n_auctions`` reserve-filtered auctions; empty pages are dropped."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n_corpus = oracle.relevance.size
    pages = []
    for _ in range(cfg.n_auctions):
        cand = rng.integers(0, n_corpus, size=cfg.ads_per_auction)
        won = run_auction(oracle.relevance[cand], cfg, rng)
        if won.size == 0:
            continue
        ads = cand[won]
        pages.append((ads, np.arange(1, won.size + 1), simulate_clicks(oracle.relevance[ads], rng)))
    table = _table(oracle, pages, Source(source))
    table.meta.update(reserve=cfg.relevance_reserve, n_auctions=cfg.n_auctions)
    return table


def simulate_randomized(oracle: RelevanceOracle, n_pages: int, max_slots: int = 5,
                        rng=None) -> ImpressionTable:
    """Pages of uniformly drawn ads in uniformly shuffled slots, no auction."""
    rng = np.random.default_rng() if rng is None else rng
    n_corpus = oracle.relevance.size
    pages = []
    for _ in range(n_pages):
        ads = rng.integers(0, n_corpus, size=max_slots)
        pos = rng.permutation(max_slots) + 1
        pages.append((ads, pos, simulate_clicks(oracle.relevance[ads], rng)))
    table = _table(oracle, pages, Source.R)
    table.meta.update(n_pages=n_pages)
    return table


@dataclass
class AuctionDatasets:
    r: ImpressionTable
    l: ImpressionTable
    tests: dict  # reserve -> ImpressionTable


def build_auction_datasets(oracle: RelevanceOracle, cfg_l: AuctionConfig,
                           test_reserves=(0.5, 0.7, 0.9), n_random_pages: int = 2000,
                           n_test_auctions: int | None = None, seed=0) -> AuctionDatasets:
    """R-data from randomized pages, L-data at ``cfg_l``'s reserve, one test set per reserve."""
    seqs = as_seed_sequence(seed).spawn(2 + len(test_reserves))
    r = simulate_randomized(oracle, n_random_pages, cfg_l.max_slots, np.random.default_rng(seqs[0]))
    l = simulate_logged(oracle, cfg_l, np.random.default_rng(seqs[1]))
    n_test = cfg_l.n_auctions if n_test_auctions is None else n_test_auctions
    tests = {}
    for reserve, seq in zip(test_reserves, seqs[2:]):
        cfg_t = AuctionConfig(cfg_l.ads_per_auction, cfg_l.max_slots, float(reserve), n_test,
                              cfg_l.score_noise_sd)
        tests[float(reserve)] = simulate_logged(oracle, cfg_t, np.random.default_rng(seq),
                                                Source.TEST)
    return AuctionDatasets(r, l, tests)
