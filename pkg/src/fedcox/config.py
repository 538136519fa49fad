"""Experiment configuration in a flat ``key = value`` text format.

Simulation settings carry a ``simulation.`` prefix::

    algorithm = alg2
    clusters = 2..9
    simulation.n_centers = 50

Lines starting with ``#`` are comments.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from fedcox.datagen import GROUP_BOUNDS, SimulationConfig
from fedcox.survival import InputError

ALGORITHMS = ("alg1", "alg2", "ifca", "event")


@dataclass
class ExperimentConfig:
    algorithm: str = "alg2"
    clusters: list[int] = field(default_factory=lambda: list(range(2, 10)))
    epsilon: float = 1e-5
    eta: float | None = None
    rounds: int = 5
    ifca_rounds: int = 10
    repetitions: int = 1
    seed: int = 0
    n_restarts: int = 10
    ridge_lambda: float = 0.0
    aggregator: str = "alg2"
    groups: list[str] = field(default_factory=lambda: ["none", "small", "medium", "large"])
    perturbation_mode: str = "add"
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    output_path: str = "results"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InputError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.aggregator not in ("alg1", "alg2"):
            raise InputError(f"aggregator must be alg1 or alg2, got {self.aggregator!r}")
        if self.repetitions < 1:
            raise InputError("repetitions must be >= 1")
        if self.rounds < 1:
            raise InputError("rounds must be >= 1")
        if not self.clusters or min(self.clusters) < 1:
            raise InputError("clusters must be positive")
        if self.epsilon < 0:
            raise InputError("epsilon must be >= 0")
        unknown = set(self.groups) - set(GROUP_BOUNDS)
        if unknown:
            raise InputError(f"unknown perturbation groups {sorted(unknown)}")


def parse_clusters(text: str) -> list[int]:
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split(".."))
            if lo > hi:
                raise InputError(f"empty cluster range {text!r}")
            return list(range(lo, hi + 1))
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"bad cluster spec {text!r}") from None
    if not values:
        raise InputError("empty cluster list")
    return values


def _format_clusters(values: list[int]) -> str:
    if len(values) > 1 and values == list(range(values[0], values[-1] + 1)):
        return f"{values[0]}..{values[-1]}"
    return ",".join(map(str, values))


def _parse_beta(text: str) -> dict[str, float] | None:
    if text.strip().lower() in ("", "none"):
        return None
    out = {}
    for item in text.split(","):
        name, _, value = item.partition(":")
        out[name.strip()] = float(value)
    return out


def _convert(kind, raw: str, key: str):
    raw = raw.strip()
    try:
        if key == "clusters":
            return parse_clusters(raw)
        if key == "groups":
            return [g.strip() for g in raw.split(",") if g.strip()]
        if key == "true_beta":
            return _parse_beta(raw)
        if key == "eta":
            return None if raw.lower() in ("auto", "none", "") else float(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise InputError(f"bad value for {key}: {raw!r}") from None


def _field_kinds(cls):
    kinds = {}
    for f in dataclasses.fields(cls):
        ann = str(f.type)
        kinds[f.name] = int if ann == "int" else float if ann in ("float",) else str
    return kinds


def parse_config(text: str) -> ExperimentConfig:
    top, sim = {}, {}
    top_kinds = _field_kinds(ExperimentConfig)
    sim_kinds = _field_kinds(SimulationConfig)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected key = value")
        key, _, value = (s.strip() for s in line.partition("="))
        if key.startswith("simulation."):
            name = key[len("simulation."):]
            if name not in sim_kinds:
                raise InputError(f"config line {lineno}: unknown key {key}")
            sim[name] = _convert(sim_kinds[name], value, name)
        else:
            if key not in top_kinds or key == "simulation":
                raise InputError(f"config line {lineno}: unknown key {key}")
            top[key] = _convert(top_kinds[key], value, key)
    return ExperimentConfig(**top, simulation=SimulationConfig(**sim))


def format_config(config: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        if f.name == "simulation":
            continue
        value = getattr(config, f.name)
        if f.name == "clusters":
            value = _format_clusters(value)
        elif f.name == "groups":
            value = ",".join(value)
        elif f.name == "eta":
            value = "auto" if value is None else repr(value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    for f in dataclasses.fields(config.simulation):
        value = getattr(config.simulation, f.name)
        if f.name == "true_beta":
            value = "none" if value is None else ",".join(f"{k}:{v!r}" for k, v in value.items())
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"simulation.{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
