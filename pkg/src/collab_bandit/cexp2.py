"""CExp2: collaborative double exploration.

Three stages, two communication rounds:

1. every agent plays every arm ``ceil(sqrt(log T))`` times, round robin;
2. guided exploration tops up each ``(arm, agent)`` count to
   ``max(tau_1, ceil(18 q B(T)))`` where ``q`` is the oracle allocation for the
   clipped gap estimates;
3. if every radius at confidence ``1/T`` is below half the new gap estimate,
   each agent commits to its empirical best mixed arm, otherwise all data is
   dropped and the fallback policy plays out the horizon.
"""

from __future__ import annotations

import math

import numpy as np

from collab_bandit.confidence import ConfidenceParams, horizon_bound, omega_matrix
from collab_bandit.model import empirical_gaps
from collab_bandit.oracle import solve_relaxed
from collab_bandit.policy import Block, BlockPolicy, LocalData, ceil_counts, fill_to_targets
from collab_bandit.wcpe import WcpeReg

GUIDED_FACTOR = 18.0
MIN_HORIZON = 16

INITIAL, GUIDED, EXPLOIT, FALLBACK = "initial", "guided", "exploit", "fallback"


class ConfigurationError(ValueError):
    pass


def initial_pulls(T: int) -> int:
    return math.ceil(math.sqrt(math.log(T)))


def clamp_interval(T: int) -> tuple[float, float]:
    if T < MIN_HORIZON:
        raise ConfigurationError(f"horizon {T} < {MIN_HORIZON}: gap clamp interval is empty")
    ll = math.log(math.log(T))
    return 1.0 / ll, ll


def project_gaps(raw, T: int) -> np.ndarray:
    lo, hi = clamp_interval(T)
    return np.minimum(np.maximum(np.asarray(raw, dtype=float), lo), hi)


def guided_targets(q: np.ndarray, bound: float, tau1: int) -> np.ndarray:
    return np.maximum(tau1, ceil_counts(GUIDED_FACTOR * q * bound))


def guided_allocation(projected, weights, T: int, sigma: float = 1.0):
    """Guided-exploration count targets and the oracle allocation behind them."""
    projected = np.asarray(projected, dtype=float)
    K, M = projected.shape
    q = solve_relaxed(projected, weights).allocation
    return guided_targets(q, horizon_bound(K, M, T, sigma), initial_pulls(T)), q


def switch_condition(gap_estimates, radius) -> bool:
    """True iff every radius is strictly below half its gap estimate."""
    return bool(np.all(np.asarray(radius) < np.asarray(gap_estimates) / 2.0))


class CExp2(BlockPolicy):
    name = "cexp2"

    def __init__(self, K: int, M: int, weights, T: int, sigma: float = 1.0, fallback=WcpeReg):
        self.K, self.M, self.T = K, M, T
        self.weights = np.asarray(weights, dtype=float)
        self.sigma = sigma
        clamp_interval(T)
        self.tau1 = initial_pulls(T)
        self.bound = horizon_bound(K, M, T, sigma)
        self.params_horizon = ConfidenceParams(K=K, M=M, delta=1.0 / T, sigma=sigma)
        self.make_fallback = fallback
        self.data = LocalData(K, M)
        self.phase = INITIAL
        self.checkpoints: dict[str, int] = {}
        self.mixed_ie = self.gaps_ie = self.projected = self.q = self.targets = None
        self.mixed_ge = self.gaps_ge = self.radius_ge = None
        self.condition: bool | None = None
        self.chosen: list[int] | None = None
        self.fallback: WcpeReg | None = None
        self._final: list[int] | None = None

    # -- schedule -----------------------------------------------------------

    def plan(self) -> Block:
        if self.phase == FALLBACK:
            return self.fallback.next_block()
        if self.phase == INITIAL:
            robin = [(k, 1) for _ in range(self.tau1) for k in range(self.K)]
            return Block([list(robin) for _ in range(self.M)], INITIAL, communicate=True)
        if self.phase == GUIDED:
            filler = np.argmax(self.mixed_ie, axis=0)
            block = Block(fill_to_targets(self.data.counts, self.targets, filler), GUIDED, communicate=True)
            if block.length > 0:
                return block
            # targets already met: everything was shared at the first checkpoint
            self._guided_checkpoint(self.mixed_ie)
            return self.plan()
        return Block.commit(self.chosen, EXPLOIT)

    def observe(self, counts: np.ndarray, sums: np.ndarray) -> None:
        if self.phase == FALLBACK:
            self.fallback.observe(counts, sums)
        else:
            self.data.add(counts, sums)

    def advance(self, rounds: int) -> None:
        super().advance(rounds)
        if self.phase == FALLBACK:
            self.fallback.advance(rounds)

    # -- communication ------------------------------------------------------

    def communicate(self) -> int:
        """Share local means; returns the payload size (means plus counts)."""
        if self.phase == FALLBACK:
            return self.fallback.communicate()
        _, mixed = self.data.broadcast(self.weights)
        if self.phase == INITIAL:
            self.checkpoints["T_ie"] = self.rounds
            self.mixed_ie = mixed
            _, _, self.gaps_ie = empirical_gaps(mixed)
            self.projected = project_gaps(self.gaps_ie, self.T)
            self.q = solve_relaxed(self.projected, self.weights).allocation
            self.targets = guided_targets(self.q, self.bound, self.tau1)
            self.phase = GUIDED
        elif self.phase == GUIDED:
            self._guided_checkpoint(mixed)
        return 2 * self.K * self.M

    def _guided_checkpoint(self, mixed: np.ndarray) -> None:
        self.checkpoints["T_ge"] = self.rounds
        self.mixed_ge = mixed
        _, _, self.gaps_ge = empirical_gaps(mixed)
        self.radius_ge = omega_matrix(self.data.counts, self.weights, self.params_horizon)
        self.condition = switch_condition(self.gaps_ge, self.radius_ge)
        if self.condition:
            self.chosen = [int(k) for k in np.argmax(mixed, axis=0)]
            self.phase = EXPLOIT
        else:
            self.checkpoints["switch"] = self.rounds
            self.fallback = self.make_fallback(self.K, self.M, self.weights, self.T, self.sigma)
            self.data = LocalData(self.K, self.M)
            self.phase = FALLBACK

    # -- reporting ----------------------------------------------------------

    def finish(self, truncated: bool) -> list[int]:
        if self.phase == FALLBACK:
            self._final = self.fallback.finish(truncated)
        elif self.phase == EXPLOIT:
            self._final = list(self.chosen)
        else:
            mixed = self.mixed_ie if self.mixed_ie is not None else self.data.broadcast(self.weights)[1]
            self._final = [int(k) for k in np.argmax(mixed, axis=0)]
        return self._final

    def info(self) -> dict:
        out = {
            "tau1": self.tau1,
            "B_T": self.bound,
            "T_ie_rounds": self.checkpoints.get("T_ie"),
            "T_ie_pulls": self.M * self.K * self.tau1,
            "T_ge": self.checkpoints.get("T_ge"),
            "condition": self.condition,
            "final_phase": self.phase,
        }
        if self.targets is not None:
            out["guided_targets"] = self.targets.tolist()
            out["projected_gaps"] = self.projected.tolist()
        if self.fallback is not None:
            out["fallback"] = self.fallback.info()
        return out
