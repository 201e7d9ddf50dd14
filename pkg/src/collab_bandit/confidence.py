"""Time-uniform confidence radii for mixed-mean estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ConfidenceError(ValueError):
    pass


@dataclass(frozen=True)
class ConfidenceParams:
    K: int
    M: int
    delta: float
    sigma: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfidenceError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.sigma > 0.0:
            raise ConfidenceError(f"sigma must be positive, got {self.sigma}")
        if self.K < 1 or self.M < 1:
            raise ConfidenceError(f"need K, M >= 1, got K={self.K}, M={self.M}")


def g_m_approx(delta: float, M: int) -> float:
    """``log(1/delta) + M * log(log(1/delta))``.

    For ``delta >= e**-e`` the double log is floored at zero so that loose
    confidence levels still give a usable threshold.
    """
    if not 0.0 < delta < 1.0:
        raise ConfidenceError(f"delta must lie in (0, 1), got {delta}")
    log_inv = -math.log(delta)
    return log_inv + M * max(math.log(log_inv), 0.0)


def beta(counts, params: ConfidenceParams) -> float:
    """Threshold ``sigma**2 * 2 * (g_M(delta/KM) + 2 * sum_m log(4 + log N_m))``."""
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (params.M,):
        raise ConfidenceError(f"expected {params.M} counts, got shape {counts.shape}")
    if np.any(counts < 1):
        raise ConfidenceError("every count must be at least 1")
    g = g_m_approx(params.delta / (params.K * params.M), params.M)
    return params.sigma**2 * 2.0 * (g + 2.0 * float(np.sum(np.log(4.0 + np.log(counts)))))


def beta_batch(counts: np.ndarray, params: ConfidenceParams) -> np.ndarray:
    """``beta`` over the last axis of a ``(..., M)`` array of counts >= 1."""
    g = g_m_approx(params.delta / (params.K * params.M), params.M)
    return params.sigma**2 * 2.0 * (g + 2.0 * np.log(4.0 + np.log(counts)).sum(axis=-1))


def omega(counts, weights_col, params: ConfidenceParams) -> float:
    """Radius ``sqrt(beta(counts) * sum_n w[n]**2 / counts[n])`` for one (arm, agent)."""
    counts = np.asarray(counts, dtype=float)
    w = np.asarray(weights_col, dtype=float)
    if w.shape != counts.shape:
        raise ConfidenceError(f"weights column {w.shape} does not match counts {counts.shape}")
    b = beta(counts, params)
    return math.sqrt(b * float(np.sum(w**2 / counts)))


def omega_matrix(counts: np.ndarray, weights: np.ndarray, params: ConfidenceParams) -> np.ndarray:
    """All radii at once.

    ``counts`` has shape ``(..., K, M)`` indexed ``[k, n]``; the result has the
    same shape indexed ``[k, m]``.
    """
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 1):
        raise ConfidenceError("every count must be at least 1")
    b = beta_batch(counts, params)  # (..., K)
    spread = (1.0 / counts) @ (np.asarray(weights) ** 2)  # [k, m] = sum_n w[n,m]^2 / N[k,n]
    return np.sqrt(b[..., None] * spread)


def horizon_bound(K: int, M: int, T: int, sigma: float = 1.0) -> float:
    """``beta`` at ``delta = 1/T`` with every count equal to ``T``.

    Equals ``2 log(KMT) + 2M log log(KMT) + 4M log(4 + log T)`` for unit sigma
    and dominates ``beta`` at ``delta = 1/T`` for any counts up to ``T``.
    """
    if T < 3:
        raise ConfidenceError(f"horizon must be at least 3, got {T}")
    params = ConfidenceParams(K=K, M=M, delta=1.0 / T, sigma=sigma)
    return beta(np.full(M, float(T)), params)
