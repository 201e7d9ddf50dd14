"""Command-line runner: ``collab-bandit {run,oracle,lower-bounds,generate}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from collab_bandit.config import ConfigError, ExperimentConfig, generate_instance, load_config, load_instance
from collab_bandit.model import InstanceError, gap_summary
from collab_bandit.oracle import (
    ConvergenceError,
    OracleError,
    solve_lower_bound,
    solve_relaxed,
    solve_sample_complexity,
)
from collab_bandit.sim import ALGORITHMS, RunTrace, aggregate, diagnostic_rounds, run_experiment

OUT_ENV = "COLLAB_BANDIT_OUT"
TRACE_HEADER = "round,agent,arm,cumulative_regret"


def _jsonable(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, default=_jsonable) + "\n"


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise argparse.ArgumentTypeError("need at least one non-negative seed")
    return seeds


def _matrix(text: str) -> np.ndarray:
    """A matrix given inline (``[[0.5], [0.5]]``) or as a path to a YAML file."""
    path = Path(text)
    doc = yaml.safe_load(path.read_text()) if path.is_file() else yaml.safe_load(text)
    return np.asarray(doc, dtype=float)


def _run_one(args) -> RunTrace:
    config, seed = args
    return run_experiment(
        config.instance,
        config.algorithm,
        config.horizon,
        seed,
        full_events=config.full_events,
        coverage_delta=config.coverage_delta,
    )


def write_trace(trace: RunTrace, path: Path, per_round: bool) -> None:
    """CSV rows ``round, agent, arm, cumulative_regret`` for each agent."""
    T = trace.rounds_played
    rounds = np.arange(1, T + 1) if per_round else diagnostic_rounds(trace)
    if rounds.size == 0:
        path.write_text(TRACE_HEADER + "\n")
        return
    arms = trace.arms_by_round()[rounds - 1]  # (R, M)
    regret = trace.cumulative_regret(rounds, per_agent=True)  # (R, M)
    R, M = arms.shape
    table = np.column_stack([
        np.repeat(rounds, M),
        np.tile(np.arange(M), R),
        arms.ravel(),
        regret.ravel(),
    ])
    with path.open("w", newline="") as fh:
        fh.write(TRACE_HEADER + "\n")
        np.savetxt(fh, table, fmt=["%d", "%d", "%d", "%.12g"], delimiter=",")


def cmd_run(args) -> int:
    config = load_config(args.config)
    overrides = {}
    if args.algorithm:
        overrides["algorithm"] = args.algorithm
    if args.horizon is not None:
        if args.horizon < 16:
            raise ConfigError(f"horizon: {args.horizon} is too small, need at least 16")
        overrides["horizon"] = args.horizon
    if args.seeds:
        overrides["seeds"] = args.seeds
    elif args.seed_base is not None or args.runs is not None:
        base = args.seed_base if args.seed_base is not None else 0
        overrides["seeds"] = tuple(range(base, base + (args.runs or 1)))
    out = args.out or os.environ.get(OUT_ENV) or config.out
    overrides["out"] = out
    if args.full_events:
        overrides["full_events"] = True
    if args.trace:
        overrides["trace"] = args.trace
    config: ExperimentConfig = replace(config, **overrides)

    jobs = [(config, s) for s in config.seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            traces = list(pool.map(_run_one, jobs))
    else:
        traces = [_run_one(j) for j in jobs]

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for trace in traces:
        write_trace(trace, out_dir / f"trace_seed{trace.seed}.csv", config.trace == "round")
    checkpoints = list(config.checkpoints) or [config.horizon]
    summary = {
        "config": {k: v for k, v in config.to_dict().items() if k != "out"},
        "aggregate": aggregate(traces, checkpoints),
        "runs": [t.summary() for t in traces],
    }
    (out_dir / "summary.json").write_text(dumps(summary))
    aborted = [t for t in traces if t.error is not None]
    for t in aborted:
        print(f"seed {t.seed} aborted after {t.rounds_played} rounds: {t.error}", file=sys.stderr)
    agg = summary["aggregate"]
    print(f"{config.algorithm}: {len(traces)} runs, mean regret {agg['regret']['mean']:.4g} "
          f"(stderr {agg['regret']['stderr']:.3g}), mean communication rounds "
          f"{agg['communication']['mean']:.3g}, output in {out_dir}")
    return 1 if aborted else 0


def _instance_arg(args):
    if not args.instance:
        raise ConfigError("instance: pass --instance PATH or --config PATH")
    return load_instance(args.instance, path="instance")


def cmd_oracle(args) -> int:
    if args.gaps is not None:
        gaps = _matrix(args.gaps)
        if gaps.ndim != 2:
            raise ConfigError("gaps: expected a K x M matrix")
        weights = _matrix(args.weights) if args.weights else np.eye(gaps.shape[1])
    else:
        inst = _instance_arg(args)
        gaps, weights = gap_summary(inst).tilde_delta, inst.weights
    res = solve_relaxed(gaps, weights)
    print(dumps({
        "objective": res.objective_value,
        "allocation": res.allocation,
        "kkt_residual": res.kkt_residual,
        "iterations": res.iterations,
    }), end="")
    return 0


def cmd_lower_bounds(args) -> int:
    inst = _instance_arg(args)
    gaps = gap_summary(inst)
    relaxed = solve_relaxed(gaps.tilde_delta, inst.weights)
    lower = solve_lower_bound(gaps, inst.weights)
    sample = solve_sample_complexity(gaps, inst.weights)
    c, ct, s = lower.objective_value, relaxed.objective_value, sample.objective_value
    bound = 4.0 * c / gaps.delta_min
    print(dumps({
        "c_star": c,
        "c_tilde_star": ct,
        "s_star": s,
        "sandwich": {"holds": bool(c <= ct * (1 + 1e-6) and ct <= 4 * c * (1 + 1e-6)),
                     "ratio": ct / c},
        "sample_bound": {"holds": bool(s <= bound * (1 + 1e-6)), "limit": bound},
        "delta_min": gaps.delta_min,
        "allocations": {"c_star": lower.allocation, "c_tilde_star": relaxed.allocation,
                        "s_star": sample.allocation},
    }), end="")
    return 0


def cmd_generate(args) -> int:
    inst = generate_instance(args.K, args.M, args.gap_floor, args.seed)
    text = yaml.safe_dump(inst.to_dict(), sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collab-bandit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a batch of seeded runs")
    run.add_argument("--config", required=True, help="YAML experiment config")
    run.add_argument("--algorithm", choices=sorted(ALGORITHMS))
    run.add_argument("--horizon", type=int)
    seeds = run.add_mutually_exclusive_group()
    seeds.add_argument("--seeds", type=_parse_seeds, help="comma-separated seeds")
    seeds.add_argument("--seed-base", type=int)
    run.add_argument("--runs", type=int, help="number of seeds counted from --seed-base")
    run.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else the config)")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--full-events", action="store_true", help="check confidence events every round")
    run.add_argument("--trace", choices=["summary", "round"], help="trace granularity")
    run.set_defaults(func=cmd_run)

    for name, func, text in (("oracle", cmd_oracle, "solve the relaxed allocation program"),
                             ("lower-bounds", cmd_lower_bounds, "print c*, relaxed c* and s*")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--instance", "--config", dest="instance", help="YAML instance or config file")
        if name == "oracle":
            p.add_argument("--gaps", help="gap matrix, inline or a YAML file")
            p.add_argument("--weights", help="weight matrix, inline or a YAML file (default identity)")
        p.set_defaults(func=func)

    gen = sub.add_parser("generate", help="sample a random instance")
    gen.add_argument("--K", type=int, required=True)
    gen.add_argument("--M", type=int, required=True)
    gen.add_argument("--gap-floor", type=float, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", help="write YAML here instead of stdout")
    gen.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InstanceError, OracleError, ConvergenceError, yaml.YAMLError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
