"""Federated rounds over a list of centers.

Centers only ever hand the server ``(coefficients, row count)`` pairs and,
for clustering, their feature-presence bits. All reductions walk the
centers in list order so results do not depend on scheduling.
"""
from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from fedcox.clustering import (
    ClusterAssignment,
    FeatureRegistry,
    build_presence_vector,
    hamming_kmeans,
)
from fedcox.datagen import PerturbationSchedule, SimulationConfig, perturb_dataset
from fedcox.survival import (
    CoxModel,
    DegenerateFitError,
    FitOptions,
    InputError,
    SurvivalDataset,
    breslow_baseline,
    concordance_index,
    fit_cox,
    loss_terms,
    neg_log_partial_likelihood,
    newton_minimize,
)

log = logging.getLogger(__name__)

PHASES = ("local_fit", "clustering", "aggregation", "evaluation")


class NotAggregated(LookupError):
    """No contributor holds the requested feature."""


@dataclass
class Center:
    id: Hashable
    dataset: SurvivalDataset
    holdout: SurvivalDataset | None = None
    local_model: CoxModel | None = None
    model: CoxModel | None = None
    last_cindex: float | None = None

    @property
    def weight(self) -> int:
        return self.dataset.n_subjects

    @property
    def features(self) -> list[str]:
        return self.dataset.feature_names

    @property
    def eval_data(self) -> SurvivalDataset:
        """C-index is measured on the holdout cohort when the center has one."""
        return self.holdout if self.holdout is not None else self.dataset

    def cindex(self, model: CoxModel) -> float:
        data = self.eval_data
        return concordance_index(data, model.beta_for(data.feature_names))


@dataclass
class AggregationResult:
    per_cluster_beta: dict[int, dict[str, float]]
    assignment: dict
    cluster_assignment: ClusterAssignment | None = None
    common_features: list[str] | None = None
    rounds: int = 1


@dataclass
class CenterOutcome:
    center_id: Hashable
    cindex_before: float
    cindex_after: float
    participated: bool = True
    degenerate: bool = False

    @property
    def improved(self) -> bool:
        return self.cindex_after > self.cindex_before


@dataclass
class RoundReport:
    round: int
    algorithm: str
    per_center: list[CenterOutcome]
    aggregation: AggregationResult
    wall_time: dict[str, float] = field(default_factory=lambda: dict.fromkeys(PHASES, 0.0))
    warnings: list[str] = field(default_factory=list)

    @property
    def improved_count(self) -> int:
        return sum(o.improved for o in self.per_center)

    @property
    def uploads(self) -> int:
        return sum(o.participated for o in self.per_center)

    @property
    def total_time(self) -> float:
        """Algorithm time: fitting, clustering and aggregation (evaluation excluded)."""
        return sum(v for k, v in self.wall_time.items() if k != "evaluation")


@dataclass
class EventReportingConfig:
    epsilon: float = 1e-5
    rounds: int = 5

    def __post_init__(self):
        if self.rounds < 1:
            raise InputError("rounds must be >= 1")
        if self.epsilon < 0:
            raise InputError("epsilon must be >= 0")


@contextmanager
def _timed(wall: dict, phase: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        wall[phase] += time.perf_counter() - t0


def fit_local(data: SurvivalDataset, options: FitOptions | None = None, init=None) -> CoxModel:
    """Local fit; no events or a non-converged fit falls back to beta = 0."""
    try:
        model = fit_cox(data, options, init=init)
    except DegenerateFitError:
        model = None
    if model is None or not model.converged or not np.all(np.isfinite(list(model.coefficients.values()))):
        zeros = np.zeros(data.n_features)
        return CoxModel(
            coefficients=dict.fromkeys(data.feature_names, 0.0),
            baseline=breslow_baseline(data, zeros),
            converged=False,
            degenerate=True,
        )
    return model


def ensure_local_fits(centers: Sequence[Center], options: FitOptions | None = None, wall=None) -> None:
    wall = wall if wall is not None else dict.fromkeys(PHASES, 0.0)
    with _timed(wall, "local_fit"):
        for center in centers:
            if center.local_model is None:
                center.local_model = fit_local(center.dataset, options)


def weighted_average(contributions: Sequence[tuple[Mapping[str, float], float]], feature: str) -> float:
    """Row-weighted mean of ``feature`` over the contributors that hold it."""
    num = 0.0
    den = 0.0
    values = []
    for beta, weight in contributions:
        if feature not in beta:
            continue
        if weight <= 0:
            raise InputError("weights must be positive")
        value = beta[feature]
        num += weight * value
        den += weight
        values.append(value)
    if not values:
        raise NotAggregated(feature)
    if len(values) == 1:
        return float(values[0])
    # clip guards the convex-combination property against rounding
    return float(min(max(num / den, min(values)), max(values)))


def aggregate(
    contributions: Sequence[tuple[Mapping[str, float], float]], features: Sequence[str]
) -> dict[str, float]:
    out = {}
    for f in features:
        try:
            out[f] = weighted_average(contributions, f)
        except NotAggregated:
            pass
    return out


def _union_features(centers: Sequence[Center]) -> list[str]:
    return list(FeatureRegistry.from_feature_sets(c.features for c in centers).names)


def common_features(centers: Sequence[Center]) -> list[str]:
    if not centers:
        return []
    shared = set(centers[0].features)
    for c in centers[1:]:
        shared &= set(c.features)
    return [f for f in centers[0].features if f in shared]


def _contrib(centers: Sequence[Center]):
    return [(c.local_model.coefficients, c.weight) for c in centers]


def _finish(centers, algorithm, aggregation, cluster_of, wall, warnings=()) -> RoundReport:
    outcomes = []
    with _timed(wall, "evaluation"):
        for center in centers:
            global_beta = aggregation.per_cluster_beta.get(cluster_of[center.id], {})
            center.model = center.local_model.with_coefficients(global_beta)
            before = center.cindex(center.local_model)
            after = center.cindex(center.model)
            center.last_cindex = after
            outcomes.append(CenterOutcome(center.id, before, after, True, center.local_model.degenerate))
    return RoundReport(0, algorithm, outcomes, aggregation, wall, list(warnings))


def run_alg1(centers: Sequence[Center], options: FitOptions | None = None) -> RoundReport:
    """Average only the features every center holds, weighted by row counts."""
    if not centers:
        raise InputError("need at least one center")
    wall = dict.fromkeys(PHASES, 0.0)
    warnings = []
    shared = common_features(centers)
    if not shared:
        warnings.append("no features common to all centers; nothing aggregated")
    ensure_local_fits(centers, options, wall)
    with _timed(wall, "aggregation"):
        beta = aggregate(_contrib(centers), shared)
    assignment = {c.id: 0 for c in centers}
    result = AggregationResult({0: beta}, assignment, None, shared)
    return _finish(centers, "alg1", result, assignment, wall, warnings)


def cluster_by_presence(
    centers: Sequence[Center], c: int, seed: int = 0, registry: FeatureRegistry | None = None, n_restarts: int = 10
) -> ClusterAssignment:
    registry = registry or FeatureRegistry.from_feature_sets(ctr.features for ctr in centers)
    vectors = [build_presence_vector(ctr.features, registry, ctr.id) for ctr in centers]
    return hamming_kmeans(vectors, c, seed=seed, n_restarts=n_restarts)


def _cluster_aggregate(centers, assignment: Mapping, c: int) -> dict[int, dict[str, float]]:
    per_cluster = {}
    for k in range(c):
        members = [ctr for ctr in centers if assignment[ctr.id] == k]
        per_cluster[k] = aggregate(_contrib(members), _union_features(members)) if members else {}
    return per_cluster


def run_alg2(
    centers: Sequence[Center],
    c: int,
    seed: int = 0,
    options: FitOptions | None = None,
    n_restarts: int = 10,
) -> RoundReport:
    """Cluster by feature presence, then component-wise averaging inside each cluster."""
    if not 1 <= c <= len(centers):
        raise InputError(f"need 1 <= c <= {len(centers)}, got {c}")
    wall = dict.fromkeys(PHASES, 0.0)
    with _timed(wall, "clustering"):
        clusters = cluster_by_presence(centers, c, seed, n_restarts=n_restarts)
    ensure_local_fits(centers, options, wall)
    with _timed(wall, "aggregation"):
        per_cluster = _cluster_aggregate(centers, clusters.assignment, c)
    result = AggregationResult(per_cluster, dict(clusters.assignment), clusters)
    return _finish(centers, "alg2", result, clusters.assignment, wall)


def _candidate_loss(center: Center, candidate: Mapping[str, float]) -> float:
    data = center.dataset
    beta = np.array([candidate.get(f, 0.0) for f in data.feature_names])
    return neg_log_partial_likelihood(data, beta)


def _ifca_init(centers: Sequence[Center], c: int, rng: np.random.Generator) -> list[dict[str, float]]:
    # first seed uniformly at random, the rest farthest-first in loss
    chosen = [int(rng.integers(len(centers)))]
    own = [neg_log_partial_likelihood(ctr.dataset, ctr.local_model.beta_for(ctr.features)) for ctr in centers]
    gaps = np.full(len(centers), np.inf)
    while len(chosen) < c:
        cand = centers[chosen[-1]].local_model.coefficients
        for i, ctr in enumerate(centers):
            gaps[i] = min(gaps[i], _candidate_loss(ctr, cand) - own[i])
        gaps[chosen] = -np.inf
        chosen.append(int(np.argmax(gaps)))
    return [dict(centers[i].local_model.coefficients) for i in chosen]


def run_ifca(
    centers: Sequence[Center],
    c: int,
    rounds: int = 10,
    seed: int = 0,
    options: FitOptions | None = None,
) -> RoundReport:
    """Loss-based iterative federated clustering baseline.

    Each round every center joins the candidate with the lowest local loss
    (features the candidate lacks count as 0), refits warm-started from
    that candidate, and the server re-averages each cluster component-wise.
    Stops once the assignment repeats.
    """
    if not 1 <= c <= len(centers):
        raise InputError(f"need 1 <= c <= {len(centers)}, got {c}")
    wall = dict.fromkeys(PHASES, 0.0)
    ensure_local_fits(centers, options, wall)
    rng = np.random.default_rng([seed, 0x1FCA])
    with _timed(wall, "clustering"):
        candidates = _ifca_init(centers, c, rng)

    assignment: dict = {}
    done = 0
    for done in range(1, rounds + 1):
        with _timed(wall, "clustering"):
            new = {}
            for ctr in centers:
                losses = [_candidate_loss(ctr, cand) for cand in candidates]
                new[ctr.id] = int(np.argmin(losses))
        stable = new == assignment
        assignment = new
        if stable:
            break
        with _timed(wall, "local_fit"):
            updated = []
            for ctr in centers:
                start = np.array([candidates[assignment[ctr.id]].get(f, 0.0) for f in ctr.features])
                model = fit_local(ctr.dataset, options, init=start)
                updated.append((model.coefficients, ctr.weight))
        with _timed(wall, "aggregation"):
            for k in range(c):
                members = [u for u, ctr in zip(updated, centers) if assignment[ctr.id] == k]
                if members:
                    feats = _union_features([ctr for ctr in centers if assignment[ctr.id] == k])
                    candidates[k] = aggregate(members, feats)
    per_cluster = {k: dict(candidates[k]) for k in range(c)}
    result = AggregationResult(per_cluster, dict(assignment), None, None, rounds=done)
    return _finish(centers, "ifca", result, assignment, wall)


def participation_decision(ci_current: float, ci_previous: float, epsilon: float) -> bool:
    return ci_current - ci_previous >= epsilon


def run_event_based(
    centers: Sequence[Center],
    config: EventReportingConfig,
    aggregator: str = "alg2",
    seed: int = 0,
    c: int = 2,
    schedules: Mapping[Hashable, PerturbationSchedule] | None = None,
    sim_config: SimulationConfig | None = None,
    options: FitOptions | None = None,
) -> list[RoundReport]:
    """Event-triggered rounds: after round 0 a center uploads only if its C-index rose by epsilon.

    Between rounds each center's data changes according to its schedule
    and the center refits. Every center, participant or not, receives its
    cluster's current global coefficients.
    """
    if aggregator not in ("alg1", "alg2"):
        raise InputError(f"unknown aggregator {aggregator!r}")
    schedules = schedules or {}
    sim_config = sim_config or SimulationConfig()
    reports = []

    wall = dict.fromkeys(PHASES, 0.0)
    for ctr in centers:
        ctr.local_model = None
    ensure_local_fits(centers, options, wall)
    if aggregator == "alg1":
        assignment = {ctr.id: 0 for ctr in centers}
        n_clusters = 1
        scopes = {0: common_features(centers)}
        clusters = None
    else:
        with _timed(wall, "clustering"):
            clusters = cluster_by_presence(centers, c, seed)
        assignment = dict(clusters.assignment)
        n_clusters = c
        scopes = {
            k: _union_features([ctr for ctr in centers if assignment[ctr.id] == k]) for k in range(n_clusters)
        }

    def broadcast(participants, previous):
        per_cluster = {}
        for k in range(n_clusters):
            members = [ctr for ctr in participants if assignment[ctr.id] == k]
            beta = dict(previous.get(k, {}))
            beta.update(aggregate(_contrib(members), scopes[k]))
            per_cluster[k] = beta
        return per_cluster

    previous_ci = {}
    global_beta: dict[int, dict[str, float]] = {}
    for t in range(config.rounds):
        if t > 0:
            wall = dict.fromkeys(PHASES, 0.0)
            with _timed(wall, "local_fit"):
                for index, ctr in enumerate(centers):
                    schedule = schedules.get(ctr.id, PerturbationSchedule("none"))
                    new_data = perturb_dataset(ctr.dataset, schedule, sim_config, t, center_index=index)
                    ctr.dataset = new_data
                    ctr.local_model = fit_local(new_data, options)
        flags = {}
        current_ci = {}
        with _timed(wall, "evaluation"):
            for ctr in centers:
                current_ci[ctr.id] = ctr.cindex(ctr.local_model)
                flags[ctr.id] = t == 0 or participation_decision(
                    current_ci[ctr.id], previous_ci[ctr.id], config.epsilon
                )
        participants = [ctr for ctr in centers if flags[ctr.id]]
        warnings = []
        if participants:
            with _timed(wall, "aggregation"):
                global_beta = broadcast(participants, global_beta)
        else:
            warnings.append("no center reported; previous global coefficients rebroadcast")
        outcomes = []
        with _timed(wall, "evaluation"):
            for ctr in centers:
                ctr.model = ctr.local_model.with_coefficients(global_beta.get(assignment[ctr.id], {}))
                after = ctr.cindex(ctr.model)
                ctr.last_cindex = after
                outcomes.append(
                    CenterOutcome(ctr.id, current_ci[ctr.id], after, flags[ctr.id], ctr.local_model.degenerate)
                )
        previous_ci = current_ci
        agg = AggregationResult({k: dict(v) for k, v in global_beta.items()}, dict(assignment), clusters,
                                scopes[0] if aggregator == "alg1" else None)
        reports.append(RoundReport(t, f"event-{aggregator}", outcomes, agg, wall, warnings))
    return reports


@dataclass
class GradientTrajectory:
    distances: np.ndarray
    beta_star: np.ndarray
    eta: float
    mu: float
    L: float
    in_guarantee_region: bool

    @property
    def squared(self) -> np.ndarray:
        return self.distances**2

    @property
    def contraction(self) -> float:
        """Per-round factor 1 - eta*mu*(1 - eta*L^2/mu)."""
        return 1.0 - self.eta * self.mu * (1.0 - self.eta * self.L**2 / self.mu)

    def bound(self) -> np.ndarray:
        t = np.arange(len(self.distances))
        with np.errstate(over="ignore"):
            return self.contraction**t * self.squared[0]

    def satisfies_bound(self, slack: float = 1e-6) -> bool:
        return bool(np.all(self.squared <= self.bound() * (1.0 + slack) + 1e-300))


def _curvature(centers, weights, beta, ridge_lambda):
    H = sum(w * loss_terms(ctr.dataset, beta, 0.0, 2)[2] / ctr.weight for ctr, w in zip(centers, weights))
    H = H / weights.sum() + ridge_lambda * np.eye(len(beta))
    if not np.all(np.isfinite(H)):
        return None
    eig = np.linalg.eigvalsh(H)
    return eig[0], eig[-1]


def run_gradient_mode(
    centers: Sequence[Center],
    eta: float | None = None,
    iterations: int = 200,
    ridge_lambda: float = 0.1,
    beta0=None,
    eta_factor: float = 0.5,
    max_refinements: int = 10,
) -> GradientTrajectory:
    """Synchronised gradient rounds inside one cluster, tracking distance to the pooled optimum.

    Center ``k`` minimises ``nll_k / r_k + ridge/2 |beta|^2``; the pooled
    objective weights these by ``r_k``. ``mu`` and ``L`` are the extreme
    Hessian eigenvalues over the optimum, the straight path to it and every
    trajectory point. With ``eta=None`` the step is ``eta_factor * mu / L^2``
    and is re-derived until the estimates cover the whole trajectory.
    """
    if not centers:
        raise InputError("need at least one center")
    if ridge_lambda <= 0:
        raise InputError("ridge_lambda must be > 0 for strong convexity")
    features = centers[0].features
    if any(ctr.features != features for ctr in centers):
        raise InputError("gradient mode needs every center on the same feature columns")
    weights = np.array([ctr.weight for ctr in centers], dtype=float)
    total = weights.sum()
    p = len(features)

    def local(ctr, beta, order):
        loss, g, h = loss_terms(ctr.dataset, beta, 0.0, order)
        r = ctr.weight
        loss = loss / r + 0.5 * ridge_lambda * float(beta @ beta)
        g = None if g is None else g / r + ridge_lambda * beta
        h = None if h is None else h / r + ridge_lambda * np.eye(p)
        return loss, g, h

    def pooled(beta, order):
        parts = [local(ctr, beta, order) for ctr in centers]
        loss = sum(w * part[0] for w, part in zip(weights, parts)) / total
        g = None if order < 1 else sum(w * part[1] for w, part in zip(weights, parts)) / total
        h = None if order < 2 else sum(w * part[2] for w, part in zip(weights, parts)) / total
        return loss, g, h

    opt = newton_minimize(pooled, np.zeros(p), FitOptions(gradient_tolerance=1e-12, max_iterations=200))
    beta_star = opt.beta
    start = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float)

    probe = [start + s * (beta_star - start) for s in np.linspace(0.0, 1.0, 11)]
    eigs = [_curvature(centers, weights, b, ridge_lambda) for b in probe]
    mu = min(e[0] for e in eigs)
    L = max(e[1] for e in eigs)

    for _ in range(max_refinements):
        step = eta if eta is not None else eta_factor * mu / L**2
        beta = start.copy()
        path = [beta]
        # outside the guarantee region the iterates may overflow; that is reported, not raised
        with np.errstate(all="ignore"):
            for _t in range(iterations):
                local_betas = [beta - step * local(ctr, beta, 1)[1] for ctr in centers]
                beta = sum(w * b for w, b in zip(weights, local_betas)) / total
                path.append(beta)
        # a divergent run (eta too large) overflows; skip those points
        with np.errstate(all="ignore"):
            path_eigs = [_curvature(centers, weights, b, ridge_lambda) for b in path]
        path_eigs = [e for e in path_eigs if e is not None]
        new_mu = min([mu] + [e[0] for e in path_eigs])
        new_L = max([L] + [e[1] for e in path_eigs])
        if new_mu == mu and new_L == L:
            break
        mu, L = new_mu, new_L
        if eta is not None:
            break

    distances = np.array([np.linalg.norm(b - beta_star) for b in path])
    in_region = step < mu / L**2
    if not in_region:
        log.warning("eta=%g is outside the guaranteed region eta < mu/L^2 = %g", step, mu / L**2)
    return GradientTrajectory(distances, beta_star, step, mu, L, in_region)
