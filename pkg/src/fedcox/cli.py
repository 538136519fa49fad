"""Command-line entry point.

Exit codes: 0 success, 2 bad input or usage, 1 internal error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from fedcox import BACKEND
from fedcox.config import ExperimentConfig, load_config, parse_clusters
from fedcox.datagen import SimulationConfig, feature_name, generate_center, generate_holdout, sample_rows
from fedcox.experiments import TIMING_COLUMNS, run_bench, run_experiment
from fedcox.federation import Center, run_gradient_mode
from fedcox.io import load_dataset, save_dataset, write_table
from fedcox.survival import FitOptions, InputError, concordance_index, fit_cox

log = logging.getLogger("fedcox")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config file (key = value)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output path")
    p.add_argument("--quiet", action="store_true", help="print nothing on success")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcox", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write synthetic centers as CSV files")
    _common(p)
    p.add_argument("--centers", type=int, help="number of centers")
    p.add_argument("--holdout", action="store_true", help="also write holdout cohorts")

    p = sub.add_parser("fit", help="fit a Cox model to one CSV dataset")
    _common(p)
    p.add_argument("dataset")
    p.add_argument("--ridge", type=float, default=0.0)

    p = sub.add_parser("run", help="run a federated experiment")
    _common(p)

    p = sub.add_parser("converge", help="gradient-mode contraction check")
    _common(p)
    p.add_argument("--centers", type=int, default=3)
    p.add_argument("--rows", type=int, default=300)
    p.add_argument("--features", type=int, default=4)
    p.add_argument("--ridge", type=float, default=0.5)
    p.add_argument("--eta", type=float, help="step size (default 0.5 * mu / L^2)")
    p.add_argument("--iterations", type=int, default=200)

    p = sub.add_parser("bench", help="timing sweep over algorithms and cluster counts")
    _common(p)
    p.add_argument("--centers", default="10,25,50", help="comma-separated center counts")
    p.add_argument("--clusters", help="e.g. 2..9")
    p.add_argument("--repeats", type=int, default=1)
    return parser


def _config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _say(args, text: str) -> None:
    if not args.quiet:
        print(text)


def cmd_gen(args) -> None:
    config = _config(args)
    sim = config.simulation
    if args.seed is not None:
        sim = dataclasses.replace(sim, seed=args.seed)
    if args.centers is not None:
        sim = dataclasses.replace(sim, n_centers=args.centers)
    out = Path(args.out or "centers")
    out.mkdir(parents=True, exist_ok=True)
    for k in range(sim.n_centers):
        save_dataset(generate_center(sim, k), out / f"center_{k:03d}.csv")
        if args.holdout:
            save_dataset(generate_holdout(sim, k), out / f"holdout_{k:03d}.csv")
    beta = sim.beta()
    write_table(out / "true_beta.csv", ("feature", "beta"), sorted(beta.items()))
    _say(args, f"wrote {sim.n_centers} centers to {out}")


def cmd_fit(args) -> None:
    data = load_dataset(args.dataset)
    model = fit_cox(data, FitOptions(ridge_lambda=args.ridge))
    beta = model.beta_for(data.feature_names)
    ci = concordance_index(data, beta)
    lines = [f"{name}\t{value:.6f}" for name, value in model.coefficients.items()]
    lines.append(f"converged\t{model.converged}")
    lines.append(f"iterations\t{model.iterations}")
    lines.append(f"loss\t{model.final_loss:.6f}")
    lines.append(f"c_index\t{ci:.6f}")
    _say(args, "\n".join(lines))
    if args.out:
        write_table(args.out, ("feature", "beta"), model.coefficients.items())


def cmd_run(args) -> None:
    config = _config(args)
    out = args.out or config.output_path
    result = run_experiment(config, out)
    _say(args, result.format())
    _say(args, f"results written to {out}")


def cmd_converge(args) -> None:
    seed = args.seed if args.seed is not None else 0
    features = [feature_name(i) for i in range(args.features)]
    truth = dict(zip(features, np.linspace(-1.0, 1.0, args.features)))
    # p_total=1 gives unit-variance covariates, keeping curvature away from zero
    sim = SimulationConfig(p_total=1, n_common=1, true_beta=truth, seed=seed)
    centers = [
        Center(k, sample_rows(sim, features, args.rows, np.random.default_rng([seed, 77, k])))
        for k in range(args.centers)
    ]
    traj = run_gradient_mode(centers, eta=args.eta, iterations=args.iterations, ridge_lambda=args.ridge)
    bound = traj.bound()
    lines = [f"mu={traj.mu:.6g} L={traj.L:.6g} eta={traj.eta:.6g} factor={traj.contraction:.10f}"]
    if not traj.in_guarantee_region:
        lines.append(f"WARNING: eta >= mu/L^2 = {traj.mu / traj.L**2:.6g}; outside the guaranteed region")
    lines.append("iteration\tsq_distance\tbound")
    step = max(1, len(traj.distances) // 20)
    for t in range(0, len(traj.distances), step):
        lines.append(f"{t}\t{traj.squared[t]:.6e}\t{bound[t]:.6e}")
    lines.append(f"bound holds: {traj.satisfies_bound()}")
    _say(args, "\n".join(lines))
    if args.out:
        write_table(args.out, ("iteration", "sq_distance", "bound"), zip(range(len(bound)), traj.squared, bound))


def cmd_bench(args) -> None:
    config = _config(args)
    if args.clusters:
        config = dataclasses.replace(config, clusters=parse_clusters(args.clusters))
    try:
        counts = [int(x) for x in args.centers.split(",")]
    except ValueError:
        raise InputError(f"bad --centers value {args.centers!r}") from None
    table = run_bench(config, counts, repeats=args.repeats)
    _say(args, f"backend: {BACKEND}")
    _say(args, table.format())
    if args.out:
        write_table(args.out, TIMING_COLUMNS, table.rows)


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "run": cmd_run, "converge": cmd_converge, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (InputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
