"""Synthetic multi-center survival cohorts.

Covariates are i.i.d. N(0, 1/p_total). Event times come from a Cox model
with constant baseline hazard ``baseline_lambda`` by inverse transform, and
each subject is censored by an independent U(0, m_i) time where m_i is the
median of that subject's event-time law. Every center owns the common
features plus a random subset of the remaining ones.

Random streams are keyed by (seed, purpose, center, round) so generating
one center never shifts another center's draws.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from fedcox.survival import InputError, SurvivalDataset

log = logging.getLogger(__name__)

# stream tags for np.random.default_rng([seed, tag, ...])
_TRUE_BETA, _CENTER, _HOLDOUT, _PERTURB, _PLANTED = 1, 2, 3, 4, 5

GROUP_BOUNDS = {"none": (0, 0), "small": (0, 50), "medium": (0, 100), "large": (0, 200)}


def feature_name(i: int) -> str:
    return f"f{i:03d}"


@dataclass
class SimulationConfig:
    n_centers: int = 50
    rows_min: int = 900
    rows_max: int = 1100
    p_total: int = 100
    n_common: int = 11
    extra_feature_prob: float = 0.5
    true_beta: dict[str, float] | None = None
    baseline_lambda: float = 1.0
    censoring: str = "individual"  # or "population": U(0, ln 2 / lambda_0)
    holdout_rows: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.n_common <= self.p_total:
            raise InputError("need 0 <= n_common <= p_total")
        if not 1 <= self.rows_min <= self.rows_max:
            raise InputError("need 1 <= rows_min <= rows_max")
        if self.baseline_lambda <= 0:
            raise InputError("baseline_lambda must be > 0")
        if self.censoring not in ("individual", "population"):
            raise InputError(f"unknown censoring mode {self.censoring!r}")
        if not 0.0 <= self.extra_feature_prob <= 1.0:
            raise InputError("extra_feature_prob must lie in [0, 1]")

    @property
    def feature_names(self) -> list[str]:
        return [feature_name(i) for i in range(self.p_total)]

    def beta(self) -> dict[str, float]:
        """True coefficients: the configured map, else i.i.d. N(0, 1) fixed by seed."""
        if self.true_beta is not None:
            return dict(self.true_beta)
        rng = np.random.default_rng([self.seed, _TRUE_BETA])
        return dict(zip(self.feature_names, map(float, rng.standard_normal(self.p_total))))


@dataclass(frozen=True)
class PerturbationSchedule:
    group: str = "none"
    mode: str = "add"

    def __post_init__(self):
        if self.group not in GROUP_BOUNDS:
            raise InputError(f"unknown perturbation group {self.group!r}")
        if self.mode not in ("add", "remove"):
            raise InputError(f"unknown perturbation mode {self.mode!r}")

    @property
    def bounds(self) -> tuple[int, int]:
        return GROUP_BOUNDS[self.group]

    def draw_count(self, rng: np.random.Generator) -> int:
        lo, hi = self.bounds
        if hi - lo < 2:
            return 0
        # strict bounds: lo < k < hi
        return int(rng.integers(lo + 1, hi))


def sample_rows(
    config: SimulationConfig, features: list[str], n: int, rng: np.random.Generator
) -> SurvivalDataset:
    """Draw ``n`` subjects over ``features`` from the generative law."""
    beta = config.beta()
    b = np.array([beta.get(f, 0.0) for f in features])
    X = rng.normal(0.0, 1.0 / math.sqrt(config.p_total), size=(n, len(features)))
    rate = config.baseline_lambda * np.exp(X @ b)
    u = rng.random(n)
    tau = -np.log1p(-u) / rate
    if config.censoring == "individual":
        upper = math.log(2.0) / rate
    else:
        upper = np.full(n, math.log(2.0) / config.baseline_lambda)
    cens = rng.random(n) * upper
    event = tau <= cens
    return SurvivalDataset(list(features), X, np.minimum(tau, cens), event)


def center_features(config: SimulationConfig, center_index: int) -> list[str]:
    rng = np.random.default_rng([config.seed, _CENTER, center_index, 0])
    names = config.feature_names
    extra = rng.random(config.p_total - config.n_common) < config.extra_feature_prob
    return names[: config.n_common] + [n for n, keep in zip(names[config.n_common:], extra) if keep]


def generate_center(config: SimulationConfig, center_index: int) -> SurvivalDataset:
    features = center_features(config, center_index)
    rng = np.random.default_rng([config.seed, _CENTER, center_index, 1])
    n = int(rng.integers(config.rows_min, config.rows_max + 1))
    return sample_rows(config, features, n, rng)


def generate_holdout(config: SimulationConfig, center_index: int, n_rows: int | None = None) -> SurvivalDataset:
    """Independent evaluation cohort with the same feature columns as the center."""
    features = center_features(config, center_index)
    rng = np.random.default_rng([config.seed, _HOLDOUT, center_index])
    return sample_rows(config, features, n_rows or config.holdout_rows, rng)


def generate_federation(config: SimulationConfig) -> list[SurvivalDataset]:
    return [generate_center(config, k) for k in range(config.n_centers)]


def perturb_dataset(
    data: SurvivalDataset,
    schedule: PerturbationSchedule,
    config: SimulationConfig,
    round: int,
    center_index: int = 0,
    min_rows: int = 10,
) -> SurvivalDataset:
    """Grow or shrink a dataset by a count drawn inside the schedule's bounds."""
    if schedule.group == "none":
        return data
    rng = np.random.default_rng([config.seed, _PERTURB, center_index, round])
    k = schedule.draw_count(rng)
    if schedule.mode == "add":
        return data.append(sample_rows(config, data.feature_names, k, rng))
    room = data.n_subjects - min_rows
    if k > room:
        log.warning("removal of %d rows clipped to %d to keep %d rows", k, max(room, 0), min_rows)
        k = max(room, 0)
    drop = rng.choice(data.n_subjects, size=k, replace=False)
    keep = np.setdiff1d(np.arange(data.n_subjects), drop)
    return data.take(keep)


@dataclass
class PlantedFederation:
    datasets: list[SurvivalDataset]
    groups: list[int]
    group_features: list[list[str]] = field(default_factory=list)
    group_beta: list[dict[str, float]] = field(default_factory=list)


def generate_planted_clusters(
    config: SimulationConfig, c: int, seed: int = 0, distinct_beta: bool = True
) -> PlantedFederation:
    """Centers split into ``c`` groups that own disjoint blocks of extra features.

    Center ``k`` belongs to group ``k % c``. The non-common features are cut
    into ``c`` equal blocks, so two groups differ in at least
    ``2 * floor((p_total - n_common) / c)`` bits. With ``distinct_beta`` each
    group gets its own true coefficients on its block and on the common
    features.
    """
    if c < 1:
        raise InputError("c must be >= 1")
    names = config.feature_names
    common = names[: config.n_common]
    rest = names[config.n_common:]
    block = len(rest) // c
    base_beta = config.beta()
    rng = np.random.default_rng([seed, _PLANTED])
    group_features, group_beta = [], []
    for g in range(c):
        feats = common + rest[g * block:(g + 1) * block]
        beta = dict(base_beta)
        if distinct_beta and c > 1:
            beta.update({f: float(v) for f, v in zip(feats, rng.normal(0.0, 3.0, len(feats)))})
        group_features.append(feats)
        group_beta.append(beta)

    datasets, groups = [], []
    for k in range(config.n_centers):
        g = k % c
        sub = SimulationConfig(**{**config.__dict__, "true_beta": group_beta[g]})
        rng_k = np.random.default_rng([seed, _PLANTED, k])
        n = int(rng_k.integers(config.rows_min, config.rows_max + 1))
        datasets.append(sample_rows(sub, group_features[g], n, rng_k))
        groups.append(g)
    return PlantedFederation(datasets, groups, group_features, group_beta)
