"""Ground-truth problem instances: weights, local and mixed means, gaps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COLUMN_SUM_TOL = 1e-9


class InstanceError(ValueError):
    """Raised when an instance violates a structural invariant."""


class NonUniqueOptimumError(InstanceError):
    """Raised when some agent has more than one mixed-best arm."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BanditInstance:
    """A simulated world.

    ``mu[k, m]`` is the local mean of arm ``k`` for agent ``m`` and
    ``weights[n, m]`` is the importance agent ``m`` gives to agent ``n``
    (columns sum to one). Rewards are Gaussian with shared scale ``sigma``.
    """

    mu: np.ndarray
    weights: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mu", _frozen(self.mu))
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def K(self) -> int:
        return self.mu.shape[0]

    @property
    def M(self) -> int:
        return self.mu.shape[1]

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "M": self.M,
            "sigma": self.sigma,
            "weights": self.weights.tolist(),
            "mu": self.mu.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> BanditInstance:
        try:
            inst = cls(mu=doc["mu"], weights=doc["weights"], sigma=doc.get("sigma", 1.0))
        except KeyError as exc:
            raise InstanceError(f"instance: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise InstanceError(f"instance: malformed array ({exc})") from None
        for key, actual in (("K", inst.mu.shape[0] if inst.mu.ndim == 2 else None),
                            ("M", inst.mu.shape[1] if inst.mu.ndim == 2 else None)):
            if key in doc and doc[key] != actual:
                raise InstanceError(f"instance.{key}: declared {doc[key]} but mu implies {actual}")
        return inst


@dataclass(frozen=True)
class GapSummary:
    mixed_mu: np.ndarray
    best_arm: np.ndarray
    delta: np.ndarray
    tilde_delta: np.ndarray
    delta_min: float
    delta_max: float


def validate_weights(weights: np.ndarray) -> None:
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 2 or weights.shape[0] != weights.shape[1]:
        raise InstanceError(f"weights: expected a square matrix, got shape {weights.shape}")
    if not np.all(np.isfinite(weights)):
        raise InstanceError("weights: non-finite entry")
    bad = np.argwhere((weights < 0.0) | (weights > 1.0))
    if bad.size:
        n, m = bad[0]
        raise InstanceError(f"weights[{n}][{m}] = {weights[n, m]} outside [0, 1]")
    sums = weights.sum(axis=0)
    for m, s in enumerate(sums):
        if abs(s - 1.0) > COLUMN_SUM_TOL:
            raise InstanceError(f"weights column {m} sums to {s:.12g}, expected 1")


def mixed_means(instance: BanditInstance) -> np.ndarray:
    """Return ``mu'[k, m] = sum_n w[n, m] * mu[k, n]``."""
    mu, w = instance.mu, instance.weights
    if mu.ndim != 2 or w.shape != (mu.shape[1], mu.shape[1]):
        raise InstanceError(f"dimension mismatch: mu {mu.shape}, weights {w.shape}")
    return mu @ w


def empirical_gaps(mixed: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gaps of a K x M matrix of (possibly estimated) mixed means.

    Returns ``(best, delta, tilde_delta)``; ties in the argmax go to the
    lowest index. For the best arm, ``tilde_delta`` is the gap of the
    runner-up, so it is zero only under an exact tie.
    """
    mixed = np.asarray(mixed, dtype=float)
    K, M = mixed.shape
    best = np.argmax(mixed, axis=0)
    cols = np.arange(M)
    delta = mixed[best, cols][None, :] - mixed
    tilde = delta.copy()
    if K > 1:
        masked = delta.copy()
        masked[best, cols] = np.inf
        tilde[best, cols] = masked.min(axis=0)
    return best, delta, tilde


def gap_summary(instance: BanditInstance) -> GapSummary:
    mixed = mixed_means(instance)
    if instance.K < 2:
        raise InstanceError("gap summary needs at least two arms")
    for m in range(instance.M):
        col = mixed[:, m]
        if np.count_nonzero(col == col.max()) > 1:
            raise NonUniqueOptimumError(f"agent {m}: mixed-best arm is not unique")
    best, delta, tilde = empirical_gaps(mixed)
    return GapSummary(
        mixed_mu=_frozen(mixed),
        best_arm=best,
        delta=_frozen(delta),
        tilde_delta=_frozen(tilde),
        delta_min=float(tilde.min()),
        delta_max=float(tilde.max()),
    )


def validate_instance(instance: BanditInstance) -> None:
    mu = instance.mu
    if mu.ndim != 2:
        raise InstanceError(f"mu: expected a K x M matrix, got shape {mu.shape}")
    K, M = mu.shape
    if K < 1 or M < 1:
        raise InstanceError(f"mu: empty shape {mu.shape}")
    if not np.all(np.isfinite(mu)):
        raise InstanceError("mu: non-finite entry")
    if instance.weights.shape != (M, M):
        raise InstanceError(f"weights: expected shape ({M}, {M}) to match mu, got {instance.weights.shape}")
    validate_weights(instance.weights)
    if not (np.isfinite(instance.sigma) and instance.sigma >= 0.0):
        raise InstanceError(f"sigma: must be a finite nonnegative number, got {instance.sigma}")
    if K >= 2:
        gap_summary(instance)
