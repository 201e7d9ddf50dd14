"""Shared plumbing for collaborative policies.

A policy hands the simulator one :class:`Block` at a time: for every agent a
list of ``(arm, pulls)`` segments, all agents covering the same number of
rounds. Blocks end at communication points, so the simulator can run a block
without consulting the policy round by round. ``Block.arm_at`` gives the
round-level view of the same schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNTIL_HORIZON = -1


@dataclass
class Block:
    segments: list[list[tuple[int, int]]]
    phase: str
    communicate: bool = False
    length: int = field(init=False)

    def __post_init__(self):
        lengths = {sum(n for _, n in segs) for segs in self.segments}
        if len(lengths) != 1:
            raise ValueError(f"agents disagree on block length: {sorted(lengths)}")
        self.length = lengths.pop()

    @classmethod
    def commit(cls, arms, phase: str) -> Block:
        """Every agent plays its arm until the horizon."""
        blk = cls([[(int(k), 0)] for k in arms], phase)
        blk.length = UNTIL_HORIZON
        return blk

    @property
    def open_ended(self) -> bool:
        return self.length == UNTIL_HORIZON

    def arm_at(self, agent: int, offset: int) -> int:
        """Arm played by ``agent`` at the ``offset``-th round (0-based) of the block."""
        if self.open_ended:
            return self.segments[agent][0][0]
        for arm, n in self.segments[agent]:
            if offset < n:
                return arm
            offset -= n
        raise IndexError("offset past the end of the block")

    def truncated(self, rounds: int) -> list[list[tuple[int, int]]]:
        out = []
        for segs in self.segments:
            if self.open_ended:
                out.append([(segs[0][0], rounds)] if rounds > 0 else [])
                continue
            left, cut = rounds, []
            for arm, n in segs:
                take = min(n, left)
                if take > 0:
                    cut.append((arm, take))
                left -= take
            out.append(cut)
        return out


def ceil_counts(x) -> np.ndarray:
    """Integer ceiling of pull targets, ignoring relative round-off below 1e-9.

    Oracle allocations are exact only up to floating point; without the guard
    a target of ``8 * 360`` computed as ``2880.0000000000005`` would ask for an
    extra pull.
    """
    x = np.asarray(x, dtype=float)
    return np.ceil(x - 1e-9 * np.abs(x)).astype(np.int64)


def fill_to_targets(counts: np.ndarray, targets: np.ndarray, filler) -> list[list[tuple[int, int]]]:
    """Per-agent schedules that bring ``counts`` up to ``targets``.

    Arms are visited in ascending index. Agents that finish before the slowest
    one play ``filler[m]`` for the remaining rounds of the block.
    """
    K, M = counts.shape
    deficit = np.maximum(targets - counts, 0).astype(np.int64)
    length = int(deficit.sum(axis=0).max()) if K else 0
    out = []
    for m in range(M):
        segs = [(k, int(deficit[k, m])) for k in range(K) if deficit[k, m] > 0]
        spare = length - int(deficit[:, m].sum())
        if spare > 0:
            segs.append((int(filler[m]), spare))
        out.append(segs)
    return out


class LocalData:
    """Per-(arm, agent) pull counts and reward sums since the last reset."""

    def __init__(self, K: int, M: int):
        self.counts = np.zeros((K, M), dtype=np.int64)
        self.sums = np.zeros((K, M))

    def add(self, counts: np.ndarray, sums: np.ndarray) -> None:
        self.counts += counts
        self.sums += sums

    def local_means(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.sums / np.maximum(self.counts, 1), 0.0)

    def broadcast(self, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """What every agent knows after a communication round.

        Returns ``(local_means, mixed_means)``; ``mixed[k, m]`` is
        ``sum_n w[n, m] * local[k, n]``.
        """
        local = self.local_means()
        return local, local @ weights


class BlockPolicy:
    """Round bookkeeping shared by the block policies.

    Subclasses implement ``plan`` (the next block), ``observe``,
    ``communicate``, ``finish`` and ``info``.
    """

    block: Block | None = None
    rounds: int = 0

    def plan(self) -> Block:
        raise NotImplementedError

    def next_block(self) -> Block:
        self.block = self.plan()
        return self.block

    def next_action(self, agent: int, t: int) -> int:
        """Arm ``agent`` plays at round ``t`` (1-based), inside the current block."""
        if self.block is None:
            self.next_block()
        return self.block.arm_at(agent, t - self.rounds - 1)

    def advance(self, rounds: int) -> None:
        self.rounds += rounds
