"""W-CPE-Reg: collaborative phased elimination run at confidence 1/T, then commit.

Phase ``r`` works at precision ``eps_r = 2**(1 - r)``. Agents sample the arms
still in play so that every confidence radius for those arms shrinks below a
quarter of the surrogate gap ``max(gap estimate, eps_r)``, share their means,
and drop arms whose upper confidence bound falls below the best lower bound.
Once every agent is down to one arm, each agent plays it until the horizon.
"""

from __future__ import annotations

import math

import numpy as np

from collab_bandit.confidence import ConfidenceParams, horizon_bound, omega_matrix
from collab_bandit.oracle import AllocationProgram, solve_program
from collab_bandit.policy import Block, BlockPolicy, LocalData, ceil_counts, fill_to_targets

BUDGET_FACTOR = 8.0


class EliminationError(RuntimeError):
    pass


def phase_precision(r: int) -> float:
    return 2.0 ** (1 - r)


def surrogate_gaps(mixed: np.ndarray | None, active: np.ndarray, eps: float) -> np.ndarray:
    """Gap estimates relative to each agent's best surviving arm, floored at ``eps``.

    The best surviving arm gets the gap of the runner-up among survivors; with
    no estimates yet (first phase) every entry is ``eps``.
    """
    K, M = active.shape
    if mixed is None:
        return np.full((K, M), eps)
    gaps = np.empty((K, M))
    for m in range(M):
        alive = np.flatnonzero(active[:, m])
        best = alive[np.argmax(mixed[alive, m])]
        gaps[:, m] = mixed[best, m] - mixed[:, m]
        rest = alive[alive != best]
        gaps[best, m] = gaps[rest, m].min() if rest.size else eps
    return np.maximum(gaps, eps)


def eliminate(mixed: np.ndarray, radius: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Drop ``k`` from ``S_m`` when ``mixed + radius`` is below ``max_j (mixed - radius)``."""
    out = active.copy()
    lower = np.where(active, mixed - radius, -np.inf)
    floor = lower.max(axis=0)
    out &= ~((mixed + radius) < floor[None, :])
    if not np.all(out.any(axis=0)):
        raise EliminationError("elimination emptied an active set")
    return out


class WcpeReg(BlockPolicy):
    """Phased elimination as a block policy.

    ``horizon`` sets the confidence level ``1/horizon`` and the per-phase
    sampling threshold; the simulator decides how many rounds are actually
    left (less than ``horizon`` when running as a fallback).
    """

    name = "wcpe-reg"

    def __init__(self, K: int, M: int, weights, horizon: int, sigma: float = 1.0):
        self.K, self.M = K, M
        self.weights = np.asarray(weights, dtype=float)
        self.horizon = horizon
        self.sigma = sigma
        self.params = ConfidenceParams(K=K, M=M, delta=1.0 / horizon, sigma=sigma)
        self.budget = horizon_bound(K, M, horizon, sigma)
        self.data = LocalData(K, M)
        self.active = np.ones((K, M), dtype=bool)
        self.mixed: np.ndarray | None = None
        self.phase = 1
        self.phases_run = 0
        self.history = [self.active.copy()]
        self.committed: list[int] | None = None
        self.exhausted = False

    @property
    def done(self) -> bool:
        return bool(np.all(self.active.sum(axis=0) == 1))

    def _empirical_best(self) -> np.ndarray:
        if self.mixed is None:
            return np.argmax(self.active, axis=0)
        scores = np.where(self.active, self.mixed, -np.inf)
        return np.argmax(scores, axis=0)

    def phase_targets(self) -> np.ndarray:
        eps = phase_precision(self.phase)
        gaps = surrogate_gaps(self.mixed, self.active, eps)
        live = self.active & (self.active.sum(axis=0) > 1)[None, :]
        program = AllocationProgram(
            cost=gaps,
            gaps=gaps,
            weights=self.weights,
            variables=np.ones((self.K, self.M), dtype=bool),
            constraints=live,
        )
        q = solve_program(program).allocation
        targets = ceil_counts(BUDGET_FACTOR * q * self.budget)
        if self.phase == 1:
            targets = np.maximum(targets, 1)  # every radius needs one pull per agent
        return targets

    def plan(self) -> Block:
        if self.committed is not None:
            return Block.commit(self.committed, "wcpe-commit")
        if self.done:
            self.committed = [int(k) for k in np.argmax(self.active, axis=0)]
            return Block.commit(self.committed, "wcpe-commit")
        while True:
            targets = self.phase_targets()
            segs = fill_to_targets(self.data.counts, targets, self._empirical_best())
            block = Block(segs, f"wcpe-{self.phase}", communicate=True)
            if block.length > 0:
                return block
            # targets already met: a communication round would add nothing
            self.phase += 1

    def observe(self, counts: np.ndarray, sums: np.ndarray) -> None:
        self.data.add(counts, sums)

    def communicate(self) -> int:
        _, self.mixed = self.data.broadcast(self.weights)
        radius = omega_matrix(self.data.counts, self.weights, self.params)
        self.active = eliminate(self.mixed, radius, self.active)
        self.history.append(self.active.copy())
        self.phases_run += 1
        self.phase += 1
        return 2 * self.K * self.M

    def finish(self, truncated: bool) -> list[int]:
        if self.committed is None:
            self.exhausted = truncated and not self.done
            self.committed = [int(k) for k in self._empirical_best()]
        return self.committed

    def info(self) -> dict:
        return {
            "phases": self.phases_run,
            "final_precision": phase_precision(self.phase),
            "horizon_exhausted": self.exhausted,
            "active_sizes": [int(s) for s in self.active.sum(axis=0)],
        }


def phase_bound(delta_min: float) -> int:
    """``ceil(log2(8 / delta_min))``: communication rounds allowed for phased elimination."""
    return math.ceil(math.log2(8.0 / delta_min))
