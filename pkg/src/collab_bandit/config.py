"""Experiment configuration files and random instance generation.

A configuration is a YAML mapping::

    instance:            # inline mapping, or a path to a YAML file holding one
      mu: [[1.0, 1.0], [0.5, 0.5]]
      weights: [[0.5, 0.5], [0.5, 0.5]]
      sigma: 0.5
    algorithm: cexp2     # or wcpe-reg
    horizon: 100000
    seeds: [0, 1, 2]     # or seed_base: 0 with runs: 3
    out: results
    trace: summary       # or round
    full_events: false
    coverage_delta: 0.1
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from collab_bandit.model import BanditInstance, InstanceError, gap_summary, validate_instance
from collab_bandit.sim import ALGORITHMS

MIN_HORIZON = 16
MAX_ATTEMPTS = 10_000
TRACE_MODES = ("summary", "round")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    instance: BanditInstance
    horizon: int
    algorithm: str = "cexp2"
    seeds: tuple[int, ...] = (0,)
    out: str = "results"
    trace: str = "summary"
    full_events: bool = False
    coverage_delta: float = 0.1
    checkpoints: tuple[int, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["instance"] = self.instance.to_dict()
        doc["seeds"] = list(self.seeds)
        doc["checkpoints"] = list(self.checkpoints)
        return doc


def _int(value, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be at least {minimum}, got {value}")
    return value


def load_instance(source, base_dir: Path | None = None, path: str = "instance") -> BanditInstance:
    if isinstance(source, str):
        file = Path(source)
        if base_dir is not None and not file.is_absolute():
            file = base_dir / file
        try:
            source = yaml.safe_load(file.read_text())
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read {file}: {exc.strerror}") from None
        if isinstance(source, dict) and "instance" in source:
            source = source["instance"]
    if not isinstance(source, dict):
        raise ConfigError(f"{path}: expected a mapping or a file path")
    try:
        inst = BanditInstance.from_dict(source)
        validate_instance(inst)
    except InstanceError as exc:
        msg = str(exc)
        if msg.startswith("instance."):
            raise ConfigError(f"{path}.{msg[len('instance.'):]}") from None
        if msg.startswith("instance:"):
            msg = msg[len("instance:"):].lstrip()
        raise ConfigError(f"{path}: {msg}") from None
    return inst


def parse_config(doc, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a configuration mapping; errors name the offending field."""
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a mapping at the top level")
    known = {"instance", "algorithm", "horizon", "seeds", "seed_base", "runs", "out",
             "trace", "full_events", "coverage_delta", "checkpoints"}
    extra = sorted(set(doc) - known)
    if extra:
        raise ConfigError(f"{extra[0]}: unknown field")
    for key in ("instance", "horizon"):
        if key not in doc:
            raise ConfigError(f"{key}: missing field")
    instance = load_instance(doc["instance"], base_dir)
    horizon = _int(doc["horizon"], "horizon")
    if horizon < MIN_HORIZON:
        raise ConfigError(f"horizon: {horizon} is too small, need at least {MIN_HORIZON}")
    algorithm = doc.get("algorithm", "cexp2")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm: unknown {algorithm!r}, choose from {sorted(ALGORITHMS)}")
    if "seeds" in doc:
        if "seed_base" in doc or "runs" in doc:
            raise ConfigError("seeds: give either seeds or seed_base/runs, not both")
        if not isinstance(doc["seeds"], list) or not doc["seeds"]:
            raise ConfigError("seeds: expected a non-empty list")
        seeds = tuple(_int(s, f"seeds[{i}]", 0) for i, s in enumerate(doc["seeds"]))
    else:
        base = _int(doc.get("seed_base", 0), "seed_base", 0)
        runs = _int(doc.get("runs", 1), "runs", 1)
        seeds = tuple(range(base, base + runs))
    trace = doc.get("trace", "summary")
    if trace not in TRACE_MODES:
        raise ConfigError(f"trace: expected one of {TRACE_MODES}, got {trace!r}")
    full_events = doc.get("full_events", False)
    if not isinstance(full_events, bool):
        raise ConfigError(f"full_events: expected true or false, got {full_events!r}")
    delta = doc.get("coverage_delta", 0.1)
    if isinstance(delta, bool) or not isinstance(delta, (int, float)) or not 0 < delta < 1:
        raise ConfigError(f"coverage_delta: expected a number in (0, 1), got {delta!r}")
    checkpoints = doc.get("checkpoints", [])
    if not isinstance(checkpoints, list):
        raise ConfigError("checkpoints: expected a list of rounds")
    checkpoints = tuple(_int(c, f"checkpoints[{i}]", 1) for i, c in enumerate(checkpoints))
    out = doc.get("out", "results")
    if not isinstance(out, str):
        raise ConfigError(f"out: expected a path, got {out!r}")
    return ExperimentConfig(
        instance=instance,
        horizon=horizon,
        algorithm=algorithm,
        seeds=seeds,
        out=out,
        trace=trace,
        full_events=full_events,
        coverage_delta=float(delta),
        checkpoints=checkpoints,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: not valid YAML ({exc})") from None
    return parse_config(doc, base_dir=path.parent)


def generate_instance(K: int, M: int, gap_floor: float, seed: int) -> BanditInstance:
    """Random instance with Dirichlet weight columns and every gap at least ``gap_floor``.

    Means are uniform on [0, 1]; draws are rejected until the smallest
    (best-arm-adjusted) mixed gap reaches the floor.
    """
    if not gap_floor > 0:
        raise ConfigError(f"gap_floor: must be positive, got {gap_floor}")
    if K < 2 or M < 1:
        raise ConfigError(f"need K >= 2 and M >= 1, got K={K}, M={M}")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_ATTEMPTS):
        mu = rng.uniform(0.0, 1.0, size=(K, M))
        weights = rng.dirichlet(np.ones(M), size=M).T
        weights[-1] = 1.0 - weights[:-1].sum(axis=0)  # exact column sums
        if np.any(weights < 0):
            continue
        inst = BanditInstance(mu=mu, weights=weights, sigma=1.0)
        try:
            gaps = gap_summary(inst)
        except InstanceError:
            continue
        if gaps.delta_min >= gap_floor:
            return inst
    raise ConfigError(f"no instance with gap floor {gap_floor} after {MAX_ATTEMPTS} attempts")
