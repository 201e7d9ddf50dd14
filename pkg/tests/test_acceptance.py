"""Acceptance criteria, each reported as one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (the lines are printed in the
terminal summary) or directly with ``python tests/test_acceptance.py``.
Criteria 6 to 10 share a separated instance: two agents, two arms, uniform
weights, every gap 0.5 and Gaussian noise with sigma 0.5.
"""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent))

from _instances import random_case  # noqa: E402
from collab_bandit.model import BanditInstance, gap_summary  # noqa: E402
from collab_bandit.oracle import (  # noqa: E402
    complexity_value,
    lower_bound_program,
    relaxed_program,
    sample_complexity_program,
    solve_lower_bound,
    solve_program,
    solve_reference,
    solve_relaxed,
    solve_sample_complexity,
)
from collab_bandit.sim import run_experiment  # noqa: E402
from collab_bandit.wcpe import phase_bound  # noqa: E402

RESULTS: dict[int, str] = {}

SEPARATED = BanditInstance(mu=[[1.0, 1.0], [0.5, 0.5]], weights=np.full((2, 2), 0.5), sigma=0.5)
COVERAGE = BanditInstance(mu=[[1.0, 1.0], [0.5, 0.5]], weights=np.full((2, 2), 0.5), sigma=1.0)
HORIZON = 10**5
BATCH = 1000


def report(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])
    assert ok, RESULTS[n]


def stderr(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(values.std(ddof=1) / math.sqrt(values.size))


@pytest.fixture(scope="module")
def oracle_cases():
    rng = np.random.default_rng(20240601)
    return [random_case(rng) for _ in range(100)]


@pytest.fixture(scope="module")
def cexp2_batch():
    return [run_experiment(SEPARATED, "cexp2", HORIZON, seed) for seed in range(BATCH)]


def test_criterion_1_closed_forms():
    start = time.perf_counter()
    inst = BanditInstance(mu=[[1.0], [0.5]], weights=[[1.0]])
    g = gap_summary(inst)
    ct = solve_relaxed(g.tilde_delta, inst.weights).objective_value
    c = solve_lower_bound(g, inst.weights).objective_value
    s = solve_sample_complexity(g, inst.weights).objective_value
    elapsed = time.perf_counter() - start
    ok = (abs(ct - 8) <= 8e-4 and abs(c - 4) <= 4e-4 and abs(s - 8) <= 8e-4 and elapsed < 1.0)
    report(1, ok, f"relaxed c* = {ct:.8f}, c* = {c:.8f}, s* = {s:.8f}, {elapsed:.3f} s")


def test_criterion_2_sandwich_and_reference(oracle_cases):
    start = time.perf_counter()
    worst_sandwich = -np.inf
    worst_ref = 0.0
    for g, w in oracle_cases:
        c = solve_lower_bound(g, w).objective_value
        ct = solve_relaxed(g.tilde_delta, w).objective_value
        worst_sandwich = max(worst_sandwich, c / ct - 1, ct / (4 * c) - 1)
        for prog in (relaxed_program(g.tilde_delta, w), lower_bound_program(g, w), sample_complexity_program(g, w)):
            main = solve_program(prog).objective_value
            ref = solve_reference(prog).objective_value
            worst_ref = max(worst_ref, abs(main - ref) / ref)
    elapsed = time.perf_counter() - start
    ok = worst_sandwich <= 1e-6 and worst_ref <= 1e-4 and elapsed < 120
    report(2, ok, f"worst sandwich excess {worst_sandwich:.2e}, worst reference gap {worst_ref:.2e}, "
                  f"{elapsed:.1f} s")


def test_criterion_3_sample_complexity_bound(oracle_cases):
    worst = -np.inf
    for g, w in oracle_cases:
        c = solve_lower_bound(g, w).objective_value
        s = solve_sample_complexity(g, w).objective_value
        worst = max(worst, s / (4 * c / g.delta_min) - 1)
    report(3, worst <= 1e-6, f"worst s* / (4 c* / gap_min) - 1 = {worst:.3e}")


def test_criterion_4_misestimated_gaps():
    rng = np.random.default_rng(77)
    worst = -np.inf
    for _ in range(100):
        g, w = random_case(rng)
        a, b = np.sort(rng.uniform(0.3, 3.0, size=2))
        delta = g.tilde_delta
        hat = delta * rng.uniform(a, b, size=delta.shape)
        c = complexity_value(solve_relaxed(delta, w).allocation, delta)
        c_hat = complexity_value(solve_relaxed(hat, w).allocation, delta)
        worst = max(worst, c_hat - (b / a**3 * c + 1e-6))
    report(4, worst <= 0, f"largest excess over (b / a^3) c + 1e-6: {worst:.3e}")


def test_criterion_5_coverage():
    start = time.perf_counter()
    held = [
        run_experiment(COVERAGE, "cexp2", 1000, seed, full_events=True, coverage_delta=0.1).flags["F"]
        for seed in range(10_000)
    ]
    freq = float(np.mean(held))
    elapsed = time.perf_counter() - start
    report(5, freq >= 0.90 and elapsed < 300, f"coverage frequency {freq:.4f} over 10000 runs, {elapsed:.0f} s")


def test_criterion_6_exploit_correctness(cexp2_batch):
    best = gap_summary(SEPARATED).best_arm.tolist()
    exploit = [t for t in cexp2_batch if t.info["final_phase"] == "exploit"]
    right = np.mean([t.final_arms == best for t in exploit]) if exploit else 0.0
    covered = [t for t in cexp2_batch if t.flags["B"]]
    right_b = np.mean([t.final_arms == best for t in covered]) if covered else 1.0
    ok = right >= 0.99 and right_b == 1.0
    report(6, ok, f"correct in {right:.4f} of {len(exploit)} exploit runs, "
                  f"{right_b:.4f} of {len(covered)} runs with the horizon event")


def test_criterion_7_communication(cexp2_batch):
    ledger = np.array([t.communication_rounds for t in cexp2_batch])
    two = (ledger == 2).astype(float)
    log_t = math.log(HORIZON)
    need_two = 1 - 1 / log_t - 3 * stderr(two)
    cap = 2 + phase_bound(0.5) / log_t + 3 * stderr(ledger)
    ok = two.mean() >= need_two and ledger.mean() <= cap
    report(7, ok, f"ledger = 2 in {two.mean():.4f} (need >= {need_two:.4f}), "
                  f"mean {ledger.mean():.4f} (cap {cap:.4f})")


def test_criterion_8_regret_scaling():
    start = time.perf_counter()
    ct = solve_relaxed(gap_summary(SEPARATED).tilde_delta, SEPARATED.weights).objective_value
    means, lines, ok = {}, [], True
    for T in (10**4, 10**5, 10**6):
        # the same seeds at every horizon, so the increments are paired
        regrets = [run_experiment(SEPARATED, "cexp2", T, seed).regret for seed in range(100)]
        means[T] = float(np.mean(regrets))
        limit = 250 * ct * math.log(T) + 2000
        ok &= means[T] <= limit
        lines.append(f"R({T:.0e}) = {means[T]:.0f} <= {limit:.0f}")
    ratio = (means[10**6] - means[10**5]) / (means[10**5] - means[10**4])
    ok &= 0.5 <= ratio <= 2.5
    elapsed = time.perf_counter() - start
    ok &= elapsed < 1800
    report(8, ok, f"{', '.join(lines)}; increment ratio {ratio:.3f}; {elapsed:.0f} s")


def test_criterion_9_events_imply_condition(cexp2_batch):
    both = [t for t in cexp2_batch if t.flags["E"] and t.flags["B"]]
    held = sum(t.info["condition"] is True for t in both)
    report(9, bool(both) and held == len(both), f"condition held in {held} of {len(both)} runs with both events")


def test_criterion_10_phased_elimination():
    gaps = gap_summary(SEPARATED)
    c = solve_lower_bound(gaps, SEPARATED.weights).objective_value
    bound = phase_bound(gaps.delta_min)
    traces = [run_experiment(SEPARATED, "wcpe-reg", HORIZON, seed) for seed in range(BATCH)]
    best = gaps.best_arm.tolist()
    correct = np.mean([t.final_arms == best for t in traces])
    phases_ok = all(t.info["phases"] <= bound for t in traces if t.flags["B"])
    regret = np.mean([t.regret for t in traces])
    limit = 1.25 * (128 * c / gaps.delta_min) * math.log2(8 / gaps.delta_min) * math.log(HORIZON)
    ok = correct >= 0.95 and phases_ok and regret <= limit
    report(10, ok, f"correct {correct:.4f}, phases within {bound} on covered runs: {phases_ok}, "
                   f"mean regret {regret:.1f} <= {limit:.0f}")


def test_criterion_11_determinism(tmp_path):
    config = tmp_path / "exp.yaml"
    config.write_text(yaml.safe_dump({
        "instance": SEPARATED.to_dict(), "horizon": 20_000, "seeds": [1, 2, 3], "algorithm": "cexp2",
    }))
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        subprocess.run([sys.executable, "-m", "collab_bandit.cli", "run", "--config", str(config),
                        "--out", str(out)], check=True, capture_output=True)
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    same = outputs[0] == outputs[1] and len(outputs[0]) == 4
    report(11, same, f"{len(outputs[0])} files compared byte for byte")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
