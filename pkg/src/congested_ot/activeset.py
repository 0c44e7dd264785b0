"""Primal active-set method for strictly convex QPs with nonnegative variables.

Solves ``min 1/2 x^T Q x + g^T x`` subject to ``E x = f`` and ``x >= 0``.
The equality rows may be linearly dependent (they are for transport
marginals), so every equality-constrained subproblem is solved by
minimum-norm least squares on its KKT system instead of a plain factorization.
The working set is driven by lexicographic (Bland-style) tie-breaking, which
keeps runs deterministic.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ConvergenceError

STEP_TOL = 1e-11


class ActiveSetResult(NamedTuple):
    x: np.ndarray
    eq_multipliers: np.ndarray
    gradient: np.ndarray  # Q x + g at the solution
    iterations: int


def _subproblem(Q, g, E, f, free):
    """Minimizer over the free coordinates with clamped ones held at zero."""
    n_eq = E.shape[0]
    idx = np.flatnonzero(free)
    k = idx.size
    kkt = np.zeros((k + n_eq, k + n_eq))
    kkt[:k, :k] = Q[np.ix_(idx, idx)]
    if n_eq:
        kkt[:k, k:] = -E[:, idx].T
        kkt[k:, :k] = E[:, idx]
    rhs = np.concatenate([-g[idx], f])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    x_free = sol[:k]
    return idx, x_free


def _min_norm_multipliers(Q, g, E, x, free):
    """Least-squares equality multipliers from stationarity on free cells."""
    grad = Q @ x + g
    if E.shape[0] == 0:
        return np.zeros(0), grad
    idx = np.flatnonzero(free)
    if idx.size == 0:
        z = np.zeros(E.shape[0])
    else:
        z, *_ = np.linalg.lstsq(E[:, idx].T, grad[idx], rcond=None)
    return z, grad


def solve_nonneg_qp(Q, g, E, f, x0, tol=1e-9, max_iter=None) -> ActiveSetResult:
    """Run the primal active-set loop from a feasible start ``x0``.

    ``x0`` must satisfy the equalities and be nonnegative.  Returns the
    minimizer, minimum-norm equality multipliers, the objective gradient at
    the solution (from which bound multipliers follow), and the iteration
    count.  Raises :class:`ConvergenceError` when the iteration cap trips.
    """
    Q = np.asarray(Q, dtype=float)
    g = np.asarray(g, dtype=float)
    E = np.asarray(E, dtype=float).reshape(-1, Q.shape[0]) if np.size(E) else np.zeros((0, Q.shape[0]))
    f = np.asarray(f, dtype=float).ravel()
    x = np.asarray(x0, dtype=float).copy()
    m = x.size
    if max_iter is None:
        max_iter = 50 * m

    clamped = x <= 0.0
    x[clamped] = 0.0

    for iteration in range(1, max_iter + 1):
        free = ~clamped
        if free.any():
            idx, x_free_new = _subproblem(Q, g, E, f, free)
            step = x_free_new - x[idx]
        else:
            idx = np.zeros(0, dtype=int)
            step = np.zeros(0)

        if step.size == 0 or np.max(np.abs(step)) <= STEP_TOL:
            z, grad = _min_norm_multipliers(Q, g, E, x, free)
            bound_mult = grad - (E.T @ z if z.size else 0.0)
            worst = np.inf
            release = None
            clamped_idx = np.flatnonzero(clamped)
            if clamped_idx.size:
                values = bound_mult[clamped_idx]
                pos = int(np.argmin(values))  # first occurrence = lowest index
                if values[pos] < -tol:
                    worst = values[pos]
                    release = clamped_idx[pos]
            if release is None:
                return ActiveSetResult(x, z, grad, iteration)
            clamped[release] = False
            continue

        # Ratio test against the zero bound on free coordinates.
        alpha = 1.0
        blocker = None
        negative = step < -STEP_TOL
        if negative.any():
            ratios = np.full(step.shape, np.inf)
            ratios[negative] = x[idx[negative]] / -step[negative]
            pos = int(np.argmin(ratios))  # lowest index on ties
            if ratios[pos] < 1.0:
                alpha = max(ratios[pos], 0.0)
                blocker = idx[pos]
        x[idx] += alpha * step
        if blocker is not None:
            x[blocker] = 0.0
            clamped[blocker] = True
        np.maximum(x, 0.0, out=x)

    raise ConvergenceError(f"active-set QP exceeded {max_iter} iterations")


def marginal_incidence(n: int, l: int) -> np.ndarray:
    """(N+L) x (N*L) row/column incidence matrix in row-major cell order.

    Column for cell (i, j) has ones in row i (its supply constraint) and in
    row N + j (its capacity constraint).  The first row equals the sum of
    the capacity rows minus the sum of supply rows 2..N, so the matrix never
    has full row rank.
    """
    E = np.zeros((n + l, n * l))
    for i in range(n):
        E[i, i * l : (i + 1) * l] = 1.0
    for j in range(l):
        E[n + j, j::l] = 1.0
    return E
