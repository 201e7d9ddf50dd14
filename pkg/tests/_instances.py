"""Random gap structures and weights shared by the oracle tests."""

import numpy as np

from collab_bandit.model import GapSummary


def random_weights(rng, M):
    w = rng.dirichlet(np.ones(M), size=M).T
    w[-1] = 1.0 - w[:-1].sum(axis=0)
    return w


def random_gaps(rng, K, M, low=0.1, high=2.0):
    """A gap summary whose adjusted gaps all lie in ``[low, high]``."""
    best = rng.integers(0, K, size=M)
    delta = rng.uniform(low, high, size=(K, M))
    delta[best, np.arange(M)] = 0.0
    tilde = delta.copy()
    for m, k in enumerate(best):
        tilde[k, m] = np.delete(delta[:, m], k).min()
    return GapSummary(
        mixed_mu=2.0 - delta,
        best_arm=best,
        delta=delta,
        tilde_delta=tilde,
        delta_min=float(tilde.min()),
        delta_max=float(tilde.max()),
    )


def random_case(rng):
    K, M = rng.integers(2, 5, size=2)
    return random_gaps(rng, K, M), random_weights(rng, M)
