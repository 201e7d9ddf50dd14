"""Collaborative multi-agent bandits with weighted mixed rewards.

Exposes the CExp2 regret-minimization policy, the W-CPE-Reg phased
elimination fallback, the allocation oracles that define the problem
complexities, and a seeded simulator with regret and communication
accounting.
"""

from collab_bandit.model import (
    BanditInstance,
    GapSummary,
    InstanceError,
    NonUniqueOptimumError,
    gap_summary,
    mixed_means,
    validate_instance,
)

__all__ = [
    "BanditInstance",
    "GapSummary",
    "InstanceError",
    "NonUniqueOptimumError",
    "gap_summary",
    "mixed_means",
    "validate_instance",
]

__version__ = "0.1.0"
