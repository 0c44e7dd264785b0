"""Exact solver for the linear matching model on balanced instances.

Implements the transportation simplex: northwest-corner start, potentials
computed over the spanning-tree basis, Bland's anti-cycling pivot rule with
lexicographic tie-breaking, so every run is deterministic.  Also provides
the combinatorial upper bounds on the number of integer matchings.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import CyclingGuardError, InvalidInstanceError, UnbalancedInstanceError
from .instances import (
    INTEGRALITY_ATOL,
    ProblemInstance,
    TransportPlan,
    balance_check,
    evaluate_cost,
    validate,
)

REDUCED_COST_TOL = 1e-9


@dataclass(frozen=True)
class BasisState:
    """Vertex data for a linear solve: basic cells and dual potentials.

    The basic cells form a spanning tree over the N row nodes and L column
    nodes, so there are exactly N + L - 1 of them; reduced costs
    ``c_ij - u_i - v_j`` vanish on basic cells.
    """

    cells: tuple
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(map(tuple, self.cells)))
        u = np.array(self.u, dtype=float)
        v = np.array(self.v, dtype=float)
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)


def _northwest_corner(mu, nu):
    """Initial basic feasible solution with exactly N + L - 1 basic cells."""
    n, l = len(mu), len(nu)
    remaining_mu = mu.astype(float).copy()
    remaining_nu = nu.astype(float).copy()
    flows = {}
    i = j = 0
    while True:
        amount = min(remaining_mu[i], remaining_nu[j])
        flows[(i, j)] = amount
        remaining_mu[i] -= amount
        remaining_nu[j] -= amount
        if i == n - 1 and j == l - 1:
            break
        # On a tie, advance one index only; the next basic cell carries zero
        # flow, keeping the basis a spanning tree.
        if remaining_mu[i] <= remaining_nu[j] and i < n - 1:
            i += 1
        else:
            j += 1
    return flows


def _potentials(cells, cost, n, l):
    """Duals with u[0] = 0, propagated along the basis tree."""
    u = np.full(n, np.nan)
    v = np.full(l, np.nan)
    row_adj = [[] for _ in range(n)]
    col_adj = [[] for _ in range(l)]
    for (i, j) in cells:
        row_adj[i].append(j)
        col_adj[j].append(i)
    u[0] = 0.0
    queue = deque([("row", 0)])
    while queue:
        kind, k = queue.popleft()
        if kind == "row":
            for j in row_adj[k]:
                if np.isnan(v[j]):
                    v[j] = cost[k, j] - u[k]
                    queue.append(("col", j))
        else:
            for i in col_adj[k]:
                if np.isnan(u[i]):
                    u[i] = cost[i, k] - v[k]
                    queue.append(("row", i))
    return u, v


def _cycle(cells, enter, n):
    """Alternating cycle closed by the entering cell inside the basis tree."""
    ei, ej = enter
    adjacency = {}
    for (i, j) in cells:
        adjacency.setdefault(i, []).append(n + j)
        adjacency.setdefault(n + j, []).append(i)
    # BFS path from the entering row node to the entering column node.
    target = n + ej
    parent = {ei: None}
    queue = deque([ei])
    while queue:
        node = queue.popleft()
        if node == target:
            break
        for nxt in adjacency.get(node, ()):
            if nxt not in parent:
                parent[nxt] = node
                queue.append(nxt)
    path = [target]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    path.reverse()  # row ei, col, row, ..., col ej
    plus, minus = [], []
    for k in range(len(path) - 1):
        a, b = path[k], path[k + 1]
        cell = (a, b - n) if a < n else (b, a - n)
        (minus if k % 2 == 0 else plus).append(cell)
    return plus, minus


def solve_linear(instance: ProblemInstance):
    """Minimize total linear matching cost over the balanced transport set.

    Returns ``(plan, basis)``.  The plan is an exact vertex: at most
    N + L - 1 cells are positive, all reduced costs are ≥ -1e-9, and strong
    duality holds against the returned potentials.

    Raises
    ------
    UnbalancedInstanceError
        If total supply and capacity differ.
    CyclingGuardError
        If the pivot cap trips (unreachable under Bland's rule; kept as a
        guard).
    """
    validate(instance).raise_if_invalid()
    balanced, imbalance = balance_check(instance)
    if not balanced:
        raise UnbalancedInstanceError(
            f"linear model requires balance; supply - capacity = {imbalance:g}"
        )
    n, l = instance.n_types, instance.n_schools
    cost = instance.linear_cost
    flows = _northwest_corner(instance.supply, instance.capacity)

    max_pivots = 200 + 50 * n * l * (n + l)
    for _ in range(max_pivots):
        cells = sorted(flows)
        u, v = _potentials(cells, cost, n, l)
        reduced = cost - u[:, None] - v[None, :]
        for (i, j) in cells:
            reduced[i, j] = 0.0
        # Bland's rule: first (row-major) cell with negative reduced cost.
        candidates = np.argwhere(reduced < -REDUCED_COST_TOL)
        if candidates.size == 0:
            pi = np.zeros((n, l))
            for (i, j), amount in flows.items():
                pi[i, j] = amount
            plan = TransportPlan(pi=pi, objective=evaluate_cost(instance, pi, "linear"))
            basis = BasisState(cells=tuple(cells), u=u, v=v)
            return plan, basis
        enter = tuple(int(x) for x in candidates[0])
        plus, minus = _cycle(cells, enter, n)
        theta = min(flows[cell] for cell in minus)
        leave = min(cell for cell in minus if flows[cell] <= theta)
        for cell in plus:
            flows[cell] += theta
        for cell in minus:
            flows[cell] -= theta
        del flows[leave]
        flows[enter] = theta
    raise CyclingGuardError(
        f"transportation simplex exceeded {max_pivots} pivots"
    )


def count_upper_bound(instance: ProblemInstance):
    """Exact combinatorial ceilings on the number of integer matchings.

    Returns ``(loose, product)`` as arbitrary-precision integers: ``loose``
    is L**M with M the total supply, ``product`` the tighter per-row
    stars-and-bars product ``prod_i C(mu_i + L - 1, L - 1)``.
    """
    validate(instance).raise_if_invalid()
    if not instance.integral_marginals():
        raise InvalidInstanceError("counting bounds require integral marginals")
    mu = [int(round(x)) for x in instance.supply]
    l = instance.n_schools
    total = sum(mu)
    loose = l**total
    product = 1
    for m_i in mu:
        product *= math.comb(m_i + l - 1, l - 1)
    return loose, product


def check_integral(values, atol: float = INTEGRALITY_ATOL) -> bool:
    arr = np.asarray(values, dtype=float)
    return bool(np.all(np.abs(arr - np.round(arr)) <= atol))
