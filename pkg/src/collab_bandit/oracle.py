"""Allocation programs behind the collaborative bandit complexities.

Every program here has the same per-arm shape::

    minimize    sum_n cost[n] * q[n]
    subject to  sum_n w[n, m]**2 / q[n] <= gap[m]**2 / 2   for each agent m

over the agents ``n`` that are decision variables for that arm. The relaxed
oracle, the regret lower bound ``c*`` and the sample complexity ``s*`` differ
only in the cost vector, the gaps on the right-hand side and which ``q[k, n]``
are variables. Arms never share variables or constraints, so each arm is
solved on its own.

The main solver works in ``x = log q`` where both the objective and the
constraints are convex, runs a log-barrier Newton method, polishes the
active set with a Newton step on the KKT equations and certifies the result
with the Lagrangian dual::

    D(lam) = sum_n 2 * sqrt(cost[n] * sum_m lam[m] * w[n, m]**2) - sum_m lam[m] * rhs[m]
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from collab_bandit.model import GapSummary, validate_weights

MIN_GAP = 1e-12
FEAS_TOL = 1e-8
KKT_TOL = 1e-8
MAX_ITER = 100_000
REFERENCE_MAX_VARS = 16


class OracleError(ValueError):
    """Invalid input to an allocation program."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class OracleResult:
    """Solution of an allocation program.

    ``allocation[k, n]`` is zero exactly where ``excluded[k, n]`` is set:
    variables that appear in no constraint (and so are driven to zero) or
    that are not part of the program at all.
    """

    allocation: np.ndarray
    objective_value: float
    kkt_residual: float
    iterations: int
    excluded: np.ndarray


@dataclass(frozen=True)
class AllocationProgram:
    """A K x M allocation program in the shared per-arm form.

    ``cost`` multiplies ``q`` in the objective, ``gaps`` set the right-hand
    sides ``gaps**2 / 2`` and ``variables`` marks which ``q[k, n]`` are free.
    ``constraints[k, m]``, when given and false, switches off the constraint
    of agent ``m`` on arm ``k``.
    """

    cost: np.ndarray
    gaps: np.ndarray
    weights: np.ndarray
    variables: np.ndarray
    constraints: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.cost.shape

    def arm(self, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Reduced data ``(cols, cost, A, rhs)`` for arm ``k``.

        Rows with no variable on the left are vacuous and dropped; columns that
        enter no remaining row are dropped as well (their optimum is q -> 0).
        """
        w2 = self.weights**2
        cols = np.flatnonzero(self.variables[k])
        A = w2[cols, :].T  # A[m, j] = w[cols[j], m]**2
        rows = A.sum(axis=1) > 0.0
        if self.constraints is not None:
            rows &= self.constraints[k]
        A = A[rows]
        used = A.sum(axis=0) > 0.0
        A = A[:, used]
        cols = cols[used]
        rhs = self.gaps[k, rows] ** 2 / 2.0
        return cols, self.cost[k, cols], A, rhs


def _as_gap_matrix(delta, name="delta") -> np.ndarray:
    delta = np.asarray(delta, dtype=float)
    if delta.ndim != 2:
        raise OracleError(f"{name}: expected a K x M matrix, got shape {delta.shape}")
    if not np.all(np.isfinite(delta)):
        raise OracleError(f"{name}: non-finite entry")
    return delta


def _check_weights(weights, M: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (M, M):
        raise OracleError(f"weights: expected shape ({M}, {M}), got {weights.shape}")
    validate_weights(weights)
    return weights


def _require_positive(gaps: np.ndarray, mask: np.ndarray, name: str) -> None:
    bad = np.argwhere(mask & ~(gaps >= MIN_GAP))
    if bad.size:
        k, m = bad[0]
        raise OracleError(f"{name}[{k}][{m}] = {float(gaps[k, m])!r}: gaps must be at least {MIN_GAP}")


# ---------------------------------------------------------------------------
# main solver


def _dual_value(lam, cost, A, rhs) -> float:
    load = lam @ A
    return float(2.0 * np.sum(np.sqrt(np.maximum(cost * load, 0.0))) - lam @ rhs)


def _certificate(q, lam, cost, A, rhs) -> float:
    """Relative duality gap plus relative infeasibility of ``q``."""
    primal = float(cost @ q)
    gap = max(primal - _dual_value(lam, cost, A, rhs), 0.0) / primal
    viol = float(np.max((A @ (1.0 / q)) / rhs - 1.0))
    return max(gap, viol, 0.0)


def _barrier(cost, A, rhs, x, tol, budget, t=None):
    """Log-barrier Newton in ``x = log q``; returns ``(x, lam, t, iterations)``."""
    m = A.shape[0]
    if t is None:
        t = m / float(cost @ np.exp(x))
    iters = 0

    def phi(x, t):
        s = rhs - A @ np.exp(-x)
        if np.any(s <= 0.0):
            return np.inf
        return t * float(cost @ np.exp(x)) - float(np.sum(np.log(s)))

    while True:
        stalled = False
        for _ in range(100):
            if iters >= budget:
                break
            q = np.exp(x)
            u = 1.0 / q
            s = rhs - A @ u
            au = A * u  # au[m, n] = A[m, n] * u[n]
            grad = t * cost * q - (au / s[:, None]).sum(axis=0)
            H = np.diag(t * cost * q + (au / s[:, None]).sum(axis=0))
            H += (au.T / s**2) @ au
            step = -np.linalg.solve(H, grad)
            dec = float(-grad @ step)
            iters += 1
            if dec / 2.0 <= 1e-10:
                break
            size, cur = 1.0, phi(x, t)
            while phi(x + size * step, t) > cur - 0.25 * size * dec and size >= 1e-12:
                size *= 0.5
            if size < 1e-12:
                stalled = True  # no progress at working precision
                break
            x = x + size * step
        else:
            stalled = True
        f = float(cost @ np.exp(x))
        if stalled or m / (t * f) <= tol or iters >= budget:
            s = rhs - A @ np.exp(-x)
            return x, 1.0 / (t * s), t, iters
        t *= 8.0


def _polish(cost, A, rhs, x, lam, budget):
    """Newton on the KKT equations of the constraints the barrier left active."""
    s_rel = 1.0 - (A @ np.exp(-x)) / rhs
    active = np.flatnonzero(s_rel < 1e-4)
    if active.size == 0:
        return None
    Aa, ra = A[active], rhs[active]
    la = lam[active].copy()
    n = x.size
    iters = 0
    for _ in range(50):
        q = np.exp(x)
        u = 1.0 / q
        au = Aa * u
        F = np.concatenate([cost * q - la @ au, au.sum(axis=1) / ra - 1.0])
        if np.max(np.abs(F[:n] / (cost * q))) < 1e-15 and np.max(np.abs(F[n:])) < 1e-15:
            break
        J = np.zeros((n + active.size, n + active.size))
        J[:n, :n] = np.diag(cost * q + la @ au)
        J[:n, n:] = -au.T
        J[n:, :n] = -au / ra[:, None]
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        x = x + step[:n]
        la = la + step[n:]
        iters += 1
        if iters >= budget or not np.all(np.isfinite(x)):
            return None
    if np.any(la < -1e-12 * max(1.0, np.max(np.abs(la)))):
        return None
    full = np.zeros_like(lam)
    full[active] = np.maximum(la, 0.0)
    return x, full, iters


def _solve_arm(cost, A, rhs, max_iter=MAX_ITER):
    """Solve one arm's reduced program; returns ``(q, residual, iterations)``."""
    n = cost.size
    if n == 0:
        return np.zeros(0), 0.0, 0
    # balanced start: every row has slack, since each row load is scaled by 2
    x = np.full(n, np.log(2.0 * np.max(A.sum(axis=1) / rhs)))
    x, lam, t, iters = _barrier(cost, A, rhs, x, 1e-7, max_iter)
    best = (np.exp(x), _certificate(np.exp(x), lam, cost, A, rhs))
    polished = _polish(cost, A, rhs, x, lam, 50)
    if polished is not None:
        xp, lp, extra = polished
        iters += extra
        qp = np.exp(xp)
        qp *= max(1.0, float(np.max((A @ (1.0 / qp)) / rhs)))
        res = _certificate(qp, lp, cost, A, rhs)
        if res < best[1]:
            best = (qp, res)
    if best[1] > 1e-12:
        # polish failed: push the barrier as far as working precision allows
        x, lam, _, extra = _barrier(cost, A, rhs, x, 1e-11, max(max_iter - iters, 100), t)
        iters += extra
        res = _certificate(np.exp(x), lam, cost, A, rhs)
        if res < best[1]:
            best = (np.exp(x), res)
    q, res = best
    if res > KKT_TOL:
        raise ConvergenceError("allocation solver did not converge", res)
    return q, res, iters


def solve_program(program: AllocationProgram, *, separate: bool = True) -> OracleResult:
    """Solve an allocation program.

    With ``separate=False`` all arms are stacked into one block-diagonal
    problem; the answer is the same and the option exists to check that.
    """
    K, M = program.shape
    alloc = np.zeros((K, M))
    excluded = np.ones((K, M), dtype=bool)
    residual, iterations = 0.0, 0
    pieces = [(k, *program.arm(k)) for k in range(K)]
    if separate:
        for k, cols, cost, A, rhs in pieces:
            q, res, it = _solve_arm(cost, A, rhs)
            alloc[k, cols] = q
            excluded[k, cols] = False
            residual, iterations = max(residual, res), iterations + it
    else:
        costs = np.concatenate([p[2] for p in pieces])
        rows = sum(p[3].shape[0] for p in pieces)
        A = np.zeros((rows, costs.size))
        r = c = 0
        for _, _, _, Ak, _ in pieces:
            A[r:r + Ak.shape[0], c:c + Ak.shape[1]] = Ak
            r, c = r + Ak.shape[0], c + Ak.shape[1]
        rhs = np.concatenate([p[4] for p in pieces])
        q, residual, iterations = _solve_arm(costs, A, rhs)
        c = 0
        for k, cols, *_ in pieces:
            alloc[k, cols] = q[c:c + cols.size]
            excluded[k, cols] = False
            c += cols.size
    alloc.setflags(write=False)
    excluded.setflags(write=False)
    objective = float(np.sum(alloc * program.cost))
    return OracleResult(alloc, objective, residual, iterations, excluded)


# ---------------------------------------------------------------------------
# the three programs


def relaxed_program(delta, weights) -> AllocationProgram:
    delta = _as_gap_matrix(delta)
    weights = _check_weights(weights, delta.shape[1])
    _require_positive(delta, np.ones(delta.shape, dtype=bool), "delta")
    return AllocationProgram(delta, delta, weights, np.ones(delta.shape, dtype=bool))


def lower_bound_program(gaps: GapSummary, weights) -> AllocationProgram:
    tilde = _as_gap_matrix(gaps.tilde_delta, "tilde_delta")
    weights = _check_weights(weights, tilde.shape[1])
    _require_positive(tilde, np.ones(tilde.shape, dtype=bool), "tilde_delta")
    K, M = tilde.shape
    variables = np.arange(K)[:, None] != np.asarray(gaps.best_arm)[None, :]
    return AllocationProgram(tilde, tilde, weights, variables)


def sample_complexity_program(gaps: GapSummary, weights) -> AllocationProgram:
    prog = lower_bound_program(gaps, weights)
    return AllocationProgram(np.ones(prog.shape), prog.gaps, prog.weights, prog.variables)


def solve_relaxed(delta, weights) -> OracleResult:
    """The oracle: allocation minimizing gap-weighted plays under width constraints."""
    return solve_program(relaxed_program(delta, weights))


def solve_lower_bound(gaps: GapSummary, weights) -> OracleResult:
    """``c*``: variables ``q[k, n]`` with ``k`` optimal for ``n`` are excluded."""
    return solve_program(lower_bound_program(gaps, weights))


def solve_sample_complexity(gaps: GapSummary, weights) -> OracleResult:
    return solve_program(sample_complexity_program(gaps, weights))


def complexity_value(allocation, delta) -> float:
    allocation = np.asarray(allocation, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if allocation.shape != delta.shape:
        raise OracleError(f"shape mismatch: allocation {allocation.shape}, delta {delta.shape}")
    return float(np.sum(allocation * delta))


def check_feasibility(allocation, delta, weights, exclude_best=None) -> float:
    """Largest constraint violation ``sum_n w**2/q - delta**2/2`` (<= 0 is feasible).

    With ``exclude_best``, agents whose best arm is ``k`` are left out of the
    sums for arm ``k``, as in the lower-bound program.
    """
    allocation = np.asarray(allocation, dtype=float)
    delta = np.asarray(delta, dtype=float)
    weights = np.asarray(weights, dtype=float)
    K, M = delta.shape
    if allocation.shape != (K, M) or weights.shape != (M, M):
        raise OracleError("shape mismatch between allocation, delta and weights")
    use = np.ones((K, M), dtype=bool)
    if exclude_best is not None:
        use = np.arange(K)[:, None] != np.asarray(exclude_best)[None, :]
    with np.errstate(divide="ignore"):
        inv = np.where(use, 1.0 / allocation, 0.0)
    lhs = inv @ (weights**2)  # lhs[k, m] = sum_n w[n, m]**2 / q[k, n]
    return float(np.max(lhs - delta**2 / 2.0))


# ---------------------------------------------------------------------------
# independent reference


def _reference_arm(cost, A, rhs, rel_step=1e-10):
    """Grid refinement over the multipliers of the Lagrangian dual.

    The dual ``D(lam)`` is concave on ``lam >= 0``. An exhaustive centred grid
    (clipped at zero) moves to its best point and halves its spacing whenever
    the centre is already best. Stationarity in ``q`` turns the multipliers
    into an allocation, ``q[n] = sqrt(sum_m lam[m] A[m, n] / cost[n])``, which
    is scaled up to the nearest feasible point.
    """
    n, m = cost.size, rhs.size
    if n == 0:
        return np.zeros(0)

    def dual(lam):
        return 2.0 * np.sqrt(cost[None, :] * (lam @ A)).sum(axis=1) - lam @ rhs

    half = 3 if m <= 5 else 2
    offsets = np.array(list(itertools.product(range(-half, half + 1), repeat=m)), dtype=float)
    q0 = 2.0 * np.max(A.sum(axis=1) / rhs)
    scale = np.mean(cost) * q0**2 / np.mean(A.sum(axis=1))
    centre = np.full(m, scale)
    step = scale
    val = dual(centre[None, :])[0]
    while step >= rel_step * max(scale, float(np.max(centre))):
        lam = np.maximum(centre + step * offsets, 0.0)
        vals = dual(lam)
        i = int(np.argmax(vals))
        if vals[i] > val:
            centre, val = lam[i], vals[i]
        else:
            step *= 0.5
    q = np.sqrt((centre @ A) / cost)
    return q * np.max((A @ (1.0 / q)) / rhs)


def solve_reference(program: AllocationProgram) -> OracleResult:
    """Brute-force grid solver used to cross-check :func:`solve_program` in tests."""
    K, M = program.shape
    if K * M > REFERENCE_MAX_VARS:
        raise OracleError(f"reference solver is limited to K*M <= {REFERENCE_MAX_VARS}")
    alloc = np.zeros((K, M))
    excluded = np.ones((K, M), dtype=bool)
    for k in range(K):
        cols, cost, A, rhs = program.arm(k)
        alloc[k, cols] = _reference_arm(cost, A, rhs)
        excluded[k, cols] = False
    return OracleResult(alloc, float(np.sum(alloc * program.cost)), float("nan"), 0, excluded)
