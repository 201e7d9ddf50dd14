"""Environment simulation, the synchronous round loop and regret accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from collab_bandit.cexp2 import CExp2
from collab_bandit.confidence import ConfidenceParams, omega_matrix
from collab_bandit.model import BanditInstance, mixed_means, validate_instance
from collab_bandit.wcpe import WcpeReg

ALGORITHMS = {"cexp2": CExp2, "wcpe-reg": WcpeReg}
GRID_POINTS = 100
_CHUNK = 1 << 14


class SimulationError(RuntimeError):
    pass


class RewardStream:
    """Gaussian rewards for one (agent, arm) pair.

    Draws come from a Philox generator keyed by ``(seed, agent, arm)``; the
    j-th pull of the pair always sees the j-th draw, whatever order the
    simulator visits the pairs in.
    """

    def __init__(self, seed: int, agent: int, arm: int, mean: float, sigma: float):
        key = np.random.SeedSequence([seed, agent, arm]).generate_state(2, np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self.mean = mean
        self.sigma = sigma
        self._cum = np.zeros(1)  # _cum[j] = sum of the first j standard-normal draws
        self.pulls = 0

    def _ensure(self, n: int) -> None:
        have = self._cum.size - 1
        if n <= have:
            return
        extra = -(-(n - have) // _CHUNK) * _CHUNK
        noise = self._gen.standard_normal(extra)
        tail = np.cumsum(np.concatenate(([self._cum[-1]], noise)))[1:]
        self._cum = np.concatenate((self._cum, tail))

    def prefix_sums(self, counts) -> np.ndarray:
        """Sum of the first ``counts`` rewards (vectorized over ``counts``)."""
        counts = np.asarray(counts, dtype=np.int64)
        self._ensure(int(counts.max(initial=0)))
        return counts * self.mean + self.sigma * self._cum[counts]

    def take(self, n: int) -> float:
        """Sum of the next ``n`` rewards."""
        a, b = self.pulls, self.pulls + n
        self._ensure(b)
        self.pulls = b
        return n * self.mean + self.sigma * (self._cum[b] - self._cum[a])

    def values(self, start: int, n: int) -> np.ndarray:
        self._ensure(start + n)
        return self.mean + self.sigma * np.diff(self._cum[start:start + n + 1])


class Environment:
    def __init__(self, instance: BanditInstance, seed: int):
        self.instance = instance
        self.seed = int(seed)
        self._streams: dict[tuple[int, int], RewardStream] = {}

    def stream(self, agent: int, arm: int) -> RewardStream:
        key = (agent, arm)
        if key not in self._streams:
            self._streams[key] = RewardStream(
                self.seed, agent, arm, float(self.instance.mu[arm, agent]), self.instance.sigma
            )
        return self._streams[key]

    def pull(self, agent: int, arm: int, n: int) -> float:
        return self.stream(agent, arm).take(n)

    def sample_reward(self, arm: int, agent: int) -> float:
        return self.pull(agent, arm, 1)


def sample_reward(env: Environment, arm: int, agent: int) -> float:
    return env.sample_reward(arm, agent)


@dataclass
class RunTrace:
    """Everything recorded about one run.

    ``segments`` holds rows ``(agent, start, length, arm)``: the agent played
    ``arm`` in rounds ``start + 1 .. start + length``.
    """

    algorithm: str
    seed: int
    horizon: int
    gaps: np.ndarray
    best_arm: np.ndarray
    segments: np.ndarray
    phases: list[tuple[str, int]]
    ledger: list[tuple[int, int]]
    final_arms: list[int]
    info: dict
    flags: dict[str, bool] = field(default_factory=dict)
    rounds_played: int = 0
    error: str | None = None
    fingerprint: str = ""

    @property
    def M(self) -> int:
        return self.gaps.shape[1]

    @property
    def K(self) -> int:
        return self.gaps.shape[0]

    @property
    def communication_rounds(self) -> int:
        return len(self.ledger)

    @property
    def regret(self) -> float:
        seg = self.segments
        if seg.size == 0:
            return 0.0
        return float(np.sum(self.gaps[seg[:, 3], seg[:, 0]] * seg[:, 2]))

    def counts(self, rounds=None) -> np.ndarray:
        """Pull counts ``[k, m]`` after ``rounds`` (default: the whole run).

        With an array of rounds the result has shape ``(len(rounds), K, M)``.
        """
        if rounds is None:
            out = np.zeros((self.K, self.M), dtype=np.int64)
            np.add.at(out, (self.segments[:, 3], self.segments[:, 0]), self.segments[:, 2])
            return out
        rounds = np.atleast_1d(np.asarray(rounds, dtype=np.int64))
        out = np.zeros((rounds.size, self.K, self.M), dtype=np.int64)
        for m in range(self.M):
            seg = self.segments[self.segments[:, 0] == m]
            if seg.size == 0:
                continue
            onehot = np.zeros((seg.shape[0], self.K), dtype=np.int64)
            onehot[np.arange(seg.shape[0]), seg[:, 3]] = seg[:, 2]
            after = np.cumsum(onehot, axis=0)
            before = after - onehot
            idx = np.searchsorted(seg[:, 1] + seg[:, 2], rounds, side="left")
            idx = np.minimum(idx, seg.shape[0] - 1)
            partial = np.clip(rounds - seg[idx, 1], 0, seg[idx, 2])
            c = before[idx].copy()
            c[np.arange(rounds.size), seg[idx, 3]] += partial
            out[:, :, m] = c
        return out

    def cumulative_regret(self, rounds, per_agent: bool = False) -> np.ndarray:
        rounds = np.atleast_1d(np.asarray(rounds, dtype=np.int64))
        per = (self.counts(rounds) * self.gaps[None]).sum(axis=1)  # (R, M)
        return per if per_agent else per.sum(axis=1)

    def arms_by_round(self) -> np.ndarray:
        """``(rounds_played, M)`` array of chosen arms; -1 marks rounds not played."""
        out = np.full((self.rounds_played, self.M), -1, dtype=np.int64)
        for agent, start, length, arm in self.segments:
            out[start:start + length, agent] = arm
        return out

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "regret": self.regret,
            "communication_rounds": self.communication_rounds,
            "ledger": [list(x) for x in self.ledger],
            "phases": [list(x) for x in self.phases],
            "final_arms": list(self.final_arms),
            "correct": bool(np.array_equal(self.final_arms, self.best_arm)),
            "flags": dict(self.flags),
            "info": self.info,
            "rounds_played": self.rounds_played,
            "error": self.error,
        }


def make_policy(algorithm, instance: BanditInstance, horizon: int):
    """Instantiate a policy by registered name, or from a class with the same constructor."""
    if callable(algorithm):
        cls = algorithm
    else:
        try:
            cls = ALGORITHMS[algorithm]
        except KeyError:
            raise SimulationError(f"unknown algorithm {algorithm!r}; choose from {sorted(ALGORITHMS)}") from None
    return cls(instance.K, instance.M, instance.weights, horizon, instance.sigma)


def _algorithm_name(algorithm) -> str:
    return algorithm if isinstance(algorithm, str) else getattr(algorithm, "name", algorithm.__name__)


def diagnostic_rounds(trace: RunTrace, full: bool = False, points: int = GRID_POINTS) -> np.ndarray:
    """Rounds at which confidence events are checked.

    Communication rounds, phase boundaries and the last round, plus a
    geometric grid of ``points`` rounds (every round when ``full``).
    """
    T = trace.rounds_played
    if T == 0:
        return np.zeros(0, dtype=np.int64)
    if full:
        return np.arange(1, T + 1)
    grid = np.unique(np.round(np.geomspace(1, T, points)).astype(np.int64))
    marks = [r for r, _ in trace.ledger] + [max(r - 1, 1) for _, r in trace.phases] + [T]
    return np.unique(np.clip(np.concatenate([grid, marks]), 1, T))


def confidence_events(trace: RunTrace, env: Environment, deltas: dict[str, float], rounds) -> dict[str, bool]:
    """Whether ``|mixed estimate - mixed mean| <= radius`` held at every checked round.

    Uses all rewards observed since round 1 (the simulator's view, not the
    policy's). An (arm, agent) pair is checked only once every agent has
    pulled that arm.
    """
    inst = env.instance
    K, M = inst.K, inst.M
    rounds = np.asarray(rounds, dtype=np.int64)
    if rounds.size == 0:
        return {name: True for name in deltas}
    counts = trace.counts(rounds)  # (R, K, M)
    sums = np.zeros(counts.shape)
    for k in range(K):
        for n in range(M):
            sums[:, k, n] = env.stream(n, k).prefix_sums(counts[:, k, n])
    valid = np.all(counts >= 1, axis=2)  # (R, K)
    safe = np.maximum(counts, 1)
    error = np.abs((sums / safe) @ inst.weights - mixed_means(inst)[None])
    out = {}
    for name, delta in deltas.items():
        params = ConfidenceParams(K=K, M=M, delta=delta, sigma=max(inst.sigma, 1e-300))
        radius = omega_matrix(safe, inst.weights, params)
        ok = (error <= radius) | ~valid[:, :, None]
        out[name] = bool(np.all(ok))
    return out


@dataclass
class _Progress:
    """What the round loop has produced so far; survives a policy error."""

    segments: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    ledger: list = field(default_factory=list)
    rounds: int = 0
    truncated: bool = False


def _run_blocks(policy, env: Environment, T: int, stepwise: bool, rec: _Progress) -> None:
    K, M = env.instance.K, env.instance.M
    while rec.rounds < T:
        t = rec.rounds
        block = policy.next_block()
        if not rec.phases or rec.phases[-1][0] != block.phase:
            rec.phases.append((block.phase, t + 1))
        L = T - t if block.open_ended else min(block.length, T - t)
        if L <= 0 and not block.communicate:
            raise SimulationError(f"policy returned an empty block in phase {block.phase!r}")
        if stepwise:
            for r in range(L):
                for m in range(M):
                    k = policy.next_action(m, t + r + 1)
                    x = env.sample_reward(k, m)
                    one, val = np.zeros((K, M), dtype=np.int64), np.zeros((K, M))
                    one[k, m], val[k, m] = 1, x
                    policy.observe(one, val)
                    rec.segments.append((m, t + r, 1, k))
        else:
            counts = np.zeros((K, M), dtype=np.int64)
            sums = np.zeros((K, M))
            for m, segs in enumerate(block.truncated(L)):
                start = t
                for arm, n in segs:
                    sums[arm, m] += env.pull(m, arm, n)
                    counts[arm, m] += n
                    rec.segments.append((m, start, n, arm))
                    start += n
            policy.observe(counts, sums)
        policy.advance(L)
        rec.rounds = t + L
        if not block.open_ended and L < block.length:
            rec.truncated = True
        elif block.communicate and rec.rounds < T:
            rec.ledger.append((rec.rounds, policy.communicate()))


def _merge(segments) -> np.ndarray:
    """Sort by (agent, start) and merge adjacent runs of the same arm."""
    if not segments:
        return np.zeros((0, 4), dtype=np.int64)
    seg = np.array(segments, dtype=np.int64)
    seg = seg[np.lexsort((seg[:, 1], seg[:, 0]))]
    out = [list(seg[0])]
    for a, s, n, k in seg[1:]:
        last = out[-1]
        if a == last[0] and k == last[3] and s == last[1] + last[2]:
            last[2] += n
        else:
            out.append([a, s, n, k])
    return np.array(out, dtype=np.int64)


def instance_fingerprint(instance: BanditInstance) -> str:
    return repr((instance.mu.tolist(), instance.weights.tolist(), instance.sigma))


def run_experiment(
    instance: BanditInstance,
    algorithm,
    horizon: int,
    seed: int,
    *,
    full_events: bool = False,
    coverage_delta: float = 0.1,
    stepwise: bool = False,
) -> RunTrace:
    """Simulate ``horizon`` synchronous rounds of ``algorithm`` on ``instance``.

    ``algorithm`` is a registered name or a policy class.
    ``stepwise`` drives the policy one round at a time through
    ``next_action``; the default runs whole blocks and is much faster. Both
    produce the same schedule.
    """
    validate_instance(instance)
    name = _algorithm_name(algorithm)
    T = int(horizon)
    env = Environment(instance, seed)
    K, M = instance.K, instance.M
    mixed = mixed_means(instance)
    best = np.argmax(mixed, axis=0)
    gaps = mixed[best, np.arange(M)][None, :] - mixed
    error = None
    rec = _Progress()
    policy = None
    try:
        policy = make_policy(algorithm, instance, T)
        _run_blocks(policy, env, T, stepwise, rec)
        final = policy.finish(rec.truncated)
        info = policy.info()
    except SimulationError:
        raise
    except Exception as exc:  # surfaced on the trace, run marked aborted
        error = f"{type(exc).__name__}: {exc}"
        final = [-1] * M
        try:
            info = policy.info() if policy is not None else {}
        except Exception:
            info = {}
    trace = RunTrace(
        algorithm=name,
        seed=int(seed),
        horizon=T,
        gaps=gaps,
        best_arm=best,
        segments=_merge(rec.segments),
        phases=rec.phases,
        ledger=rec.ledger,
        final_arms=[int(k) for k in final],
        info=info,
        rounds_played=rec.rounds,
        error=error,
        fingerprint=instance_fingerprint(instance) + f"|{name}|{T}",
    )
    if rec.rounds > 0 and K > 0:
        deltas = {"B": 1.0 / T, "F": coverage_delta}
        if T > math.e:
            deltas["E"] = 1.0 / math.log(T)
        rounds = diagnostic_rounds(trace, full=full_events)
        trace.flags.update(confidence_events(trace, env, deltas, rounds))
    return trace


def _mean_stderr(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def aggregate(traces: list[RunTrace], checkpoints=None) -> dict:
    """Monte-Carlo summary of runs sharing one configuration."""
    if not traces:
        raise SimulationError("nothing to aggregate")
    if len({t.fingerprint for t in traces}) != 1:
        raise SimulationError("traces come from different configurations")
    T = traces[0].horizon
    checkpoints = sorted({int(c) for c in (checkpoints or [T]) if 1 <= c <= T})
    curves = np.array([t.cumulative_regret(checkpoints) for t in traces])
    ledger = [t.communication_rounds for t in traces]
    values, freq = np.unique(ledger, return_counts=True)
    out = {
        "algorithm": traces[0].algorithm,
        "horizon": T,
        "runs": len(traces),
        "aborted": sum(t.error is not None for t in traces),
        "regret": dict(zip(("mean", "stderr"), _mean_stderr([t.regret for t in traces]))),
        "checkpoints": [
            {"round": c, **dict(zip(("mean", "stderr"), _mean_stderr(curves[:, i])))}
            for i, c in enumerate(checkpoints)
        ],
        "communication": {
            **dict(zip(("mean", "stderr"), _mean_stderr(ledger))),
            "distribution": {str(int(v)): int(f) for v, f in zip(values, freq)},
        },
        "best_arm_success": float(np.mean([np.array_equal(t.final_arms, t.best_arm) for t in traces])),
        "event_frequency": {
            name: float(np.mean([t.flags.get(name, False) for t in traces]))
            for name in sorted({n for t in traces for n in t.flags})
        },
    }
    if traces[0].algorithm == "cexp2":
        switched = [t.info.get("final_phase") == "fallback" for t in traces]
        out["switch"] = dict(zip(("frequency", "stderr"), _mean_stderr(switched)))
    return out
