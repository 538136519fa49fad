"""Experiment drivers: improvement table, event-based selection ratios, timing sweep."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from fedcox.config import ExperimentConfig
from fedcox.datagen import PerturbationSchedule, SimulationConfig, generate_center, generate_holdout
from fedcox.federation import (
    Center,
    EventReportingConfig,
    RoundReport,
    run_alg1,
    run_alg2,
    run_event_based,
    run_ifca,
)
from fedcox.io import write_table
from fedcox.survival import FitOptions

log = logging.getLogger(__name__)

IMPROVEMENT_COLUMNS = ("repetition", "clusters", "alg1", "ifca", "alg2", "t_stat", "p_value")
CENTER_COLUMNS = ("repetition", "clusters", "algorithm", "center", "cindex_before", "cindex_after", "improved")
EVENT_COLUMNS = ("group", "round", "selection_ratio", "stderr")
TIMING_COLUMNS = ("algorithm", "centers", "clusters", "phase", "seconds")


class ExperimentError(RuntimeError):
    pass


def make_centers(sim: SimulationConfig, with_holdout: bool = True) -> list[Center]:
    return [
        Center(k, generate_center(sim, k), generate_holdout(sim, k) if with_holdout else None)
        for k in range(sim.n_centers)
    ]


def _rep_sim(config: ExperimentConfig, rep: int) -> SimulationConfig:
    return dataclasses.replace(config.simulation, seed=config.simulation.seed + config.seed + rep)


def paired_t(after_a: list[float], after_b: list[float]) -> tuple[float, float]:
    """Paired t-test on per-center C-index, ``a`` minus ``b``; (nan, nan) if undefined."""
    diff = np.asarray(after_a) - np.asarray(after_b)
    if diff.size < 2 or np.all(diff == diff[0]):
        return float("nan"), float("nan")
    res = stats.ttest_rel(after_a, after_b)
    return float(res.statistic), float(res.pvalue)


@dataclass
class ImprovementTable:
    rows: list[tuple] = field(default_factory=list)
    center_rows: list[tuple] = field(default_factory=list)
    reports: list[RoundReport] = field(default_factory=list)

    def format(self) -> str:
        lines = [f"{'rep':>3} {'c':>3} {'Alg1':>5} {'IFCA':>5} {'Alg2':>5} {'t':>7} {'p':>7}"]
        for rep, c, a1, ifca, a2, t, p in self.rows:
            lines.append(f"{rep:>3} {c:>3} {a1:>5} {ifca:>5} {a2:>5} {t:>7.3f} {p:>7.3f}")
        return "\n".join(lines)


def run_improvement(config: ExperimentConfig) -> ImprovementTable:
    options = FitOptions(ridge_lambda=config.ridge_lambda)
    table = ImprovementTable()
    for rep in range(config.repetitions):
        sim = _rep_sim(config, rep)
        centers = make_centers(sim)
        if max(config.clusters) > len(centers):
            raise ExperimentError(f"{max(config.clusters)} clusters requested for {len(centers)} centers")
        r1 = run_alg1(centers, options)
        table.reports.append(r1)
        for c in config.clusters:
            r2 = run_alg2(centers, c, seed=config.seed + rep, options=options, n_restarts=config.n_restarts)
            ri = run_ifca(centers, c, rounds=config.ifca_rounds, seed=config.seed + rep, options=options)
            table.reports += [r2, ri]
            t, p = paired_t([o.cindex_after for o in r2.per_center], [o.cindex_after for o in r1.per_center])
            table.rows.append((rep, c, r1.improved_count, ri.improved_count, r2.improved_count, t, p))
            chosen = {"alg1": r1, "alg2": r2, "ifca": ri}[config.algorithm]
            for o in chosen.per_center:
                table.center_rows.append(
                    (rep, c, config.algorithm, o.center_id, o.cindex_before, o.cindex_after, o.improved)
                )
    return table


@dataclass
class EventSummary:
    rows: list[tuple] = field(default_factory=list)
    ratios: dict = field(default_factory=dict)  # (group, round) -> per-repetition ratios
    uploads: list[list[int]] = field(default_factory=list)

    def mean_ratio(self, group: str) -> float:
        vals = [np.mean(v) for (g, t), v in self.ratios.items() if g == group and t > 0]
        return float(np.mean(vals)) if vals else float("nan")

    def format(self) -> str:
        lines = [f"{'group':>8} {'round':>5} {'ratio':>7} {'stderr':>7}"]
        for g, t, r, se in self.rows:
            lines.append(f"{g:>8} {t:>5} {r:>7.3f} {se:>7.3f}")
        return "\n".join(lines)


def run_event(config: ExperimentConfig) -> EventSummary:
    options = FitOptions(ridge_lambda=config.ridge_lambda)
    summary = EventSummary()
    groups = config.groups
    c = config.clusters[0]
    for rep in range(config.repetitions):
        sim = _rep_sim(config, rep)
        centers = make_centers(sim)
        schedules = {
            ctr.id: PerturbationSchedule(groups[i % len(groups)], config.perturbation_mode)
            for i, ctr in enumerate(centers)
        }
        reports = run_event_based(
            centers,
            EventReportingConfig(config.epsilon, config.rounds),
            aggregator=config.aggregator,
            seed=config.seed + rep,
            c=c,
            schedules=schedules,
            sim_config=sim,
            options=options,
        )
        summary.uploads.append([r.uploads for r in reports])
        for report in reports:
            for g in groups:
                flags = [o.participated for o in report.per_center if schedules[o.center_id].group == g]
                if flags:
                    summary.ratios.setdefault((g, report.round), []).append(float(np.mean(flags)))
    for g in groups:
        for t in range(config.rounds):
            vals = summary.ratios.get((g, t))
            if not vals:
                continue
            se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            summary.rows.append((g, t, float(np.mean(vals)), se))
    return summary


@dataclass
class TimingTable:
    rows: list[tuple] = field(default_factory=list)

    def total(self, algorithm: str, centers: int, clusters: int) -> float:
        return sum(
            s for a, k, c, phase, s in self.rows
            if a == algorithm and k == centers and c == clusters and phase != "total"
        )

    def format(self) -> str:
        lines = [f"{'alg':>5} {'K':>4} {'c':>3} {'phase':>12} {'seconds':>9}"]
        for a, k, c, phase, s in self.rows:
            lines.append(f"{a:>5} {k:>4} {c:>3} {phase:>12} {s:>9.4f}")
        return "\n".join(lines)


def run_bench(
    config: ExperimentConfig, center_counts=(10, 25, 50), repeats: int = 1
) -> TimingTable:
    """Per-phase wall clock for each algorithm, refitting local models from scratch every run."""
    options = FitOptions(ridge_lambda=config.ridge_lambda)
    table = TimingTable()
    for K in center_counts:
        sim = dataclasses.replace(config.simulation, n_centers=K, seed=config.simulation.seed + config.seed)
        centers = make_centers(sim, with_holdout=False)
        for c in config.clusters:
            if c > K:
                continue
            runners = {
                "alg1": lambda: run_alg1(centers, options),
                "alg2": lambda: run_alg2(centers, c, seed=config.seed, options=options, n_restarts=config.n_restarts),
                "ifca": lambda: run_ifca(centers, c, rounds=config.ifca_rounds, seed=config.seed, options=options),
            }
            for name, runner in runners.items():
                best = None
                for _ in range(repeats):
                    for ctr in centers:
                        ctr.local_model = None
                    report = runner()
                    if best is None or report.total_time < best.total_time:
                        best = report
                for phase in ("local_fit", "clustering", "aggregation"):
                    table.rows.append((name, K, c, phase, best.wall_time[phase]))
                table.rows.append((name, K, c, "total", best.total_time))
    return table


def run_experiment(config: ExperimentConfig, out_dir=None):
    """Run the configured experiment and write its CSVs to ``out_dir`` (if given)."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if config.algorithm == "event":
        result = run_event(config)
        if out is not None:
            write_table(out / "event.csv", EVENT_COLUMNS, result.rows)
        return result
    result = run_improvement(config)
    if out is not None:
        write_table(out / "improvement.csv", IMPROVEMENT_COLUMNS, result.rows)
        write_table(out / "centers.csv", CENTER_COLUMNS, result.center_rows)
        timing = []
        for rep in result.reports:
            for phase in ("local_fit", "clustering", "aggregation"):
                c = len(rep.aggregation.per_cluster_beta)
                timing.append((rep.algorithm, len(rep.per_center), c, phase, rep.wall_time[phase]))
        write_table(out / "timing.csv", TIMING_COLUMNS, timing)
    return result
