"""Synthetic covariate-shift data with an explicit generating mechanism.

Stable features ``S`` cause the outcome; unstable features ``V`` are tied to
``S`` in one of three ways and pick up a tunable spurious correlation with
the outcome through biased sample selection.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .dataset import Dataset, Source

# noise terms are (mean, variance)
LATENT_NOISE_VAR = 2.0
OUTCOME_NOISE_VAR = 0.2


class MechanismCase(str, enum.Enum):
    INDEPENDENT = "independent"  # S independent of V
    S_TO_V = "s_to_v"
    V_TO_S = "v_to_s"


def as_seed_sequence(seed) -> np.random.SeedSequence:
    """Accept an int, a sequence of ints or an existing SeedSequence."""
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def stable_count(p_total: int) -> int:
    return int(round(0.4 * p_total))


@dataclass(frozen=True)
class GenConfig:
    p_total: int = 20
    p_s: int | None = None
    inclusion_rate: float | None = None  # None: no biased selection
    n_target: int = 1000
    case: MechanismCase = MechanismCase.INDEPENDENT
    seed: int = 0

    def __post_init__(self):
        if self.p_s is None:
            object.__setattr__(self, "p_s", stable_count(self.p_total))
        object.__setattr__(self, "case", MechanismCase(self.case))
        if not 1 <= self.p_s < self.p_total:
            raise ValueError("need 1 <= p_s < p_total")
        if self.inclusion_rate is not None and not 0 < self.inclusion_rate < 1:
            raise ValueError("inclusion_rate must lie in the open interval (0, 1)")
        if self.n_target < 1:
            raise ValueError("n_target must be >= 1")

    @property
    def p_v(self) -> int:
        return self.p_total - self.p_s


@dataclass(frozen=True)
class OutcomeParams:
    alpha: np.ndarray  # length p_s
    beta: np.ndarray   # length p_s - 1

    @classmethod
    def default(cls, p_total: int, p_s: int) -> "OutcomeParams":
        j = np.arange(1, p_s + 1)
        alpha = (-1.0) ** j * (j % 3 + 1) * p_total / 3.0
        beta = np.full(p_s - 1, p_total / 2.0)
        return cls(alpha, beta)


@dataclass(frozen=True)
class Features:
    S_latent: np.ndarray
    V_latent: np.ndarray
    S: np.ndarray
    V: np.ndarray


def gen_features(case, n: int, p_s: int, p_v: int, rng) -> Features:
    """Latent Gaussians for S and V under ``case``, binarised at zero.

    The ``k+1`` neighbour in the dependent block wraps around to index 0.
    """
    case = MechanismCase(case)
    sd = np.sqrt(LATENT_NOISE_VAR)
    if case is MechanismCase.INDEPENDENT:
        S_lat = rng.standard_normal((n, p_s))
        V_lat = rng.standard_normal((n, p_v))
    elif case is MechanismCase.S_TO_V:
        S_lat = rng.standard_normal((n, p_s))
        k = np.arange(p_v)
        V_lat = S_lat[:, k % p_s] + S_lat[:, (k + 1) % p_s] + sd * rng.standard_normal((n, p_v))
    else:
        V_lat = rng.standard_normal((n, p_v))
        j = np.arange(p_s)
        S_lat = V_lat[:, j % p_v] + V_lat[:, (j + 1) % p_v] + sd * rng.standard_normal((n, p_s))
    return Features(S_lat, V_lat, (S_lat > 0).astype(np.int8), (V_lat > 0).astype(np.int8))


def outcome_index(S, params: OutcomeParams) -> np.ndarray:
    """Linear plus adjacent-pair interaction effects of S."""
    S = np.asarray(S, dtype=np.float64)
    return S @ params.alpha + (S[:, :-1] * S[:, 1:]) @ params.beta


def gen_outcome(S, params: OutcomeParams, rng, noise=None):
    """``y_latent = sigmoid(index(S)) + noise``; ``y = 1[y_latent > 0.5]``.

    ``noise`` overrides the Gaussian draw (e.g. zeros, or a replayed stream).
    Returns ``(y_latent, y)``.
    """
    S = np.asarray(S)
    if noise is None:
        noise = np.sqrt(OUTCOME_NOISE_VAR) * rng.standard_normal(S.shape[0])
    y_latent = expit(outcome_index(S, params)) + noise
    return y_latent, (y_latent > 0.5).astype(np.int8)


def selection_agrees(y_latent, V) -> np.ndarray:
    """True where the mean of V and the latent outcome sit on the same side of 0.5."""
    v_bar = np.asarray(V, dtype=np.float64).mean(axis=1)
    y_latent = np.asarray(y_latent)
    return ((v_bar > 0.5) & (y_latent > 0.5)) | ((v_bar <= 0.5) & (y_latent <= 0.5))


def biased_selection(y_latent, V, inclusion_rate: float, n_target: int, rng) -> np.ndarray:
    """Indices of accepted candidate rows, in order, at most ``n_target`` of them.

    Agreeing rows are kept with probability ``inclusion_rate``, the rest with
    ``1 - inclusion_rate``.
    """
    if not 0 < inclusion_rate < 1:
        raise ValueError("inclusion_rate must lie in the open interval (0, 1)")
    keep_p = np.where(selection_agrees(y_latent, V), inclusion_rate, 1.0 - inclusion_rate)
    accepted = np.flatnonzero(rng.random(keep_p.shape[0]) < keep_p)
    return accepted[:n_target]


def feature_names(p_s: int, p_v: int) -> list[str]:
    return [f"S{j}" for j in range(1, p_s + 1)] + [f"V{k}" for k in range(1, p_v + 1)]


def generate(cfg: GenConfig, source=Source.TEST, rng=None) -> Dataset:
    """Draw exactly ``cfg.n_target`` rows, rejection sampling when selection is on."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    params = OutcomeParams.default(cfg.p_total, cfg.p_s)
    blocks_X, blocks_y, blocks_lat, have = [], [], [], 0
    while have < cfg.n_target:
        need = cfg.n_target - have
        # about half the candidates survive selection on average
        batch = need if cfg.inclusion_rate is None else max(2 * need, 64)
        f = gen_features(cfg.case, batch, cfg.p_s, cfg.p_v, rng)
        y_lat, y = gen_outcome(f.S, params, rng)
        if cfg.inclusion_rate is None:
            rows = np.arange(batch)
        else:
            rows = biased_selection(y_lat, f.V, cfg.inclusion_rate, need, rng)
        blocks_X.append(np.hstack([f.S, f.V])[rows])
        blocks_y.append(y[rows])
        blocks_lat.append(y_lat[rows])
        have += rows.size
    X = np.vstack(blocks_X)
    ds = Dataset(X, np.concatenate(blocks_y), feature_names(cfg.p_s, cfg.p_v), source)
    ds.extras["y_latent"] = np.concatenate(blocks_lat)
    return ds


@dataclass(frozen=True)
class SimulationSizes:
    n_r: int = 1000
    n_l: int = 5000
    n_t: int = 2000
    l_inclusion_rate: float = 0.7
    r_inclusion_rate: float | None = None


def build_training_datasets(p_total: int, seed, sizes: SimulationSizes = SimulationSizes()):
    """R-data (independent case, unselected by default) and L-data (S->V case)."""
    ss = as_seed_sequence(seed)
    r_seq, l_seq = ss.spawn(2)
    r = generate(GenConfig(p_total, n_target=sizes.n_r, case=MechanismCase.INDEPENDENT,
                           inclusion_rate=sizes.r_inclusion_rate),
                 Source.R, np.random.default_rng(r_seq))
    l = generate(GenConfig(p_total, n_target=sizes.n_l, case=MechanismCase.S_TO_V,
                           inclusion_rate=sizes.l_inclusion_rate),
                 Source.L, np.random.default_rng(l_seq))
    return r, l


def build_test_dataset(p_total: int, inclusion_rate: float, seed, n_t: int = 2000) -> Dataset:
    """Test data from the V->S case under the given inclusion rate."""
    return generate(GenConfig(p_total, n_target=n_t, case=MechanismCase.V_TO_S,
                              inclusion_rate=inclusion_rate),
                    Source.TEST, np.random.default_rng(as_seed_sequence(seed)))


def build_experiment_datasets(p_total: int, test_inclusion_rate: float, seed: int = 0,
                              sizes: SimulationSizes = SimulationSizes()):
    """``(r_data, l_data, test_data)`` sharing one feature schema."""
    ss = as_seed_sequence(seed)
    train_seq, test_seq = ss.spawn(2)
    r, l = build_training_datasets(p_total, train_seq, sizes)
    t = build_test_dataset(p_total, test_inclusion_rate, test_seq, sizes.n_t)
    return r, l, t


def gen_classification(n: int, n_informative: int = 5, n_noise: int = 5,
                       class_sep: float = 1.0, rng=None, direction=None) -> Dataset:
    """Two unit-covariance Gaussian clusters at ``+-class_sep * u``.

    ``u`` is a random unit vector in the informative block unless given.
    Noise columns are standard normal; labels are balanced and shuffled.
    """
    rng = np.random.default_rng() if rng is None else rng
    if n < 2 or n_informative < 1:
        raise ValueError("need n >= 2 and n_informative >= 1")
    if direction is None:
        u = rng.standard_normal(n_informative)
        u /= np.linalg.norm(u)
    else:
        u = np.asarray(direction, dtype=np.float64)
        u = u / np.linalg.norm(u)
    y = np.zeros(n, dtype=np.int8)
    y[n // 2:] = 1
    y = rng.permutation(y)
    sign = np.where(y == 1, 1.0, -1.0)
    X_inf = sign[:, None] * class_sep * u + rng.standard_normal((n, n_informative))
    X = np.hstack([X_inf, rng.standard_normal((n, n_noise))])
    names = [f"x{i}" for i in range(1, n_informative + n_noise + 1)]
    ds = Dataset(X, y, names, Source.TEST)
    ds.extras["direction"] = u
    return ds
