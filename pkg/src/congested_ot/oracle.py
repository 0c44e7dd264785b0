"""Independent brute-force and numerical reference implementations.

Everything here is deliberately simple and slow: exhaustive enumeration over
integer plans, projected gradient descent, and plain central differences.
These never share code paths with the production solvers (the gradient
system is rebuilt from dense Kronecker products here, on purpose), so tests
can use them as independent cross-checks.  The module also hosts the
seeded random-instance generators whose draws respect each parameter gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InvalidInstanceError
from .instances import (
    PenalizedInstance,
    ProblemInstance,
    TransportPlan,
    evaluate_cost,
    validate,
)

ENUMERATION_CAP = 12


@dataclass(frozen=True)
class EnumerationResult:
    """Outcome of exhausting all integer plans with the given marginals."""

    count: int
    best_plan: np.ndarray | None
    best_objective: float | None


def enumerate_integer_plans(
    instance: ProblemInstance | PenalizedInstance,
    model: str | None = "linear",
    cap: int = ENUMERATION_CAP,
) -> EnumerationResult:
    """Exhaustively enumerate integer plans with exact marginals.

    Rows are filled in index order, cells left to right with ascending
    values, pruned by the remaining column budgets, so plans are visited in
    lexicographic order and ties resolve to the lexicographically smallest
    plan.  With ``model=None`` only the count is produced.  The total mass
    must not exceed ``cap``.
    """
    base = instance.base if isinstance(instance, PenalizedInstance) else instance
    validate(instance).raise_if_invalid()
    if not base.integral_marginals():
        raise InvalidInstanceError("enumeration requires integral marginals")
    mu = [int(round(x)) for x in base.supply]
    nu = [int(round(x)) for x in base.capacity]
    if sum(mu) != sum(nu):
        raise InvalidInstanceError("enumeration requires balanced marginals")
    if sum(mu) > cap:
        raise InvalidInstanceError(
            f"total mass {sum(mu)} exceeds the enumeration cap {cap}"
        )
    n, l = base.n_types, base.n_schools
    plan = np.zeros((n, l), dtype=np.int64)
    remaining = list(nu)
    state = {"count": 0, "best": None, "best_obj": None}

    def fill_cell(i: int, j: int, row_left: int):
        if j == l - 1:
            if row_left <= remaining[j]:
                plan[i, j] = row_left
                remaining[j] -= row_left
                fill_row(i + 1)
                remaining[j] += row_left
                plan[i, j] = 0
            return
        for value in range(min(row_left, remaining[j]) + 1):
            plan[i, j] = value
            remaining[j] -= value
            fill_cell(i, j + 1, row_left - value)
            remaining[j] += value
        plan[i, j] = 0

    def fill_row(i: int):
        if i == n:
            state["count"] += 1
            if model is not None:
                objective = evaluate_cost(instance, plan.astype(float), model)
                if state["best_obj"] is None or objective < state["best_obj"]:
                    state["best_obj"] = objective
                    state["best"] = plan.copy()
            return
        fill_cell(i, 0, mu[i])

    fill_row(0)
    best = state["best"].astype(float) if state["best"] is not None else None
    return EnumerationResult(
        count=state["count"], best_plan=best, best_objective=state["best_obj"]
    )


def _dense_gradient_system(instance: PenalizedInstance):
    """System matrix and right-hand side built from dense Kronecker products.

    Intentionally a different construction from the production assembly.
    """
    base = instance.base
    n, l = base.n_types, base.n_schools
    a_matrix = (
        np.diag(base.quad_cost.ravel())
        + np.kron(np.diag(instance.eps), np.ones((l, l)))
        + np.kron(np.ones((n, n)), np.diag(instance.delta))
    )
    b = np.array(
        [
            instance.eps[i] * base.supply[i]
            + instance.delta[j] * base.capacity[j]
            - base.linear_cost[i, j] / 2.0
            for i in range(n)
            for j in range(l)
        ]
    )
    return a_matrix, b


def projected_gradient_reference(
    instance: PenalizedInstance, tol: float = 1e-8, max_iter: int = 500_000
) -> TransportPlan:
    """Projected gradient descent for the penalized model.

    Fixed step equal to the reciprocal largest eigenvalue of the system
    matrix, stopped when the projected-gradient residual drops below
    ``tol``.  Cross-check only; the production solvers are elsewhere.
    """
    validate(instance).raise_if_invalid()
    a_matrix, b = _dense_gradient_system(instance)
    step = 1.0 / float(np.linalg.eigvalsh(a_matrix).max())
    x = np.maximum(b, 0.0) / np.diag(a_matrix)
    for _ in range(max_iter):
        gradient = a_matrix @ x - b
        proposal = np.maximum(x - step * gradient, 0.0)
        residual = float(np.max(np.abs(np.maximum(x - gradient, 0.0) - x)))
        if residual < tol:
            break
        x = proposal
    else:
        raise ConvergenceError(
            f"projected gradient did not reach {tol:g} in {max_iter} iterations"
        )
    pi = x.reshape(instance.n_types, instance.n_schools)
    return TransportPlan(pi=pi, objective=evaluate_cost(instance, pi, "penalized"))


def finite_difference_gradient(func, point: np.ndarray, step: float) -> np.ndarray:
    """Central differences of ``func`` around ``point``, coordinate-wise."""
    point = np.asarray(point, dtype=float)
    flat = point.ravel()
    grad = np.zeros_like(flat)
    for k in range(flat.size):
        bumped = flat.copy()
        bumped[k] += step
        upper = func(bumped.reshape(point.shape))
        bumped[k] -= 2.0 * step
        lower = func(bumped.reshape(point.shape))
        grad[k] = (upper - lower) / (2.0 * step)
    return grad.reshape(point.shape)


# ---------------------------------------------------------------------------
# Seeded generators.  Each draw respects the gate named in the function, so
# acceptance sweeps can sample regimes uniformly; record the seed for replay.
# ---------------------------------------------------------------------------


def _integer_composition(rng: np.random.Generator, total: int, parts: int) -> np.ndarray:
    """Random composition of ``total`` into ``parts`` strictly positive ints."""
    if total < parts:
        raise InvalidInstanceError("total mass must cover one unit per part")
    extra = rng.multinomial(total - parts, np.full(parts, 1.0 / parts))
    return extra + 1


def random_balanced_instance(
    rng: np.random.Generator,
    n: int,
    l: int,
    integral: bool = False,
    total_mass: int | None = None,
) -> ProblemInstance:
    """Balanced instance with positive congestion weights."""
    if integral:
        total = int(total_mass if total_mass is not None else rng.integers(max(n, l), 11))
        total = max(total, n, l)
        mu = _integer_composition(rng, total, n).astype(float)
        nu = _integer_composition(rng, total, l).astype(float)
    else:
        mu = rng.uniform(1.0, 10.0, n)
        nu = rng.uniform(1.0, 10.0, l)
        nu *= mu.sum() / nu.sum()
    return ProblemInstance(
        n_types=n,
        n_schools=l,
        fixed_cost=rng.uniform(0.0, 5.0, (n, l)),
        linear_cost=rng.uniform(0.5, 10.0, (n, l)),
        quad_cost=rng.uniform(0.2, 5.0, (n, l)),
        supply=mu,
        capacity=nu,
    )


def random_penalized_instance(
    rng: np.random.Generator, n: int, l: int
) -> PenalizedInstance:
    """Generic penalized instance with strictly positive parameters."""
    base = random_balanced_instance(rng, n, l)
    return PenalizedInstance(
        base=base,
        eps=rng.uniform(0.05, 1.0, n),
        delta=rng.uniform(0.05, 1.0, l),
    )


def random_contraction_instance(
    rng: np.random.Generator,
    n: int,
    l: int,
    interior: bool = True,
    max_tries: int = 200,
) -> PenalizedInstance:
    """Instance passing gate a4 (series contraction), optionally interior."""
    from .penalized import solve_direct  # local import to keep layers separate

    for _ in range(max_tries):
        eps = rng.uniform(0.02, 0.3, n)
        delta = rng.uniform(0.02, 0.3, l)
        floor = (eps.max() * l + delta.max() * n) * rng.uniform(1.3, 4.0)
        quad = rng.uniform(floor, 3.0 * floor, (n, l))
        mu = rng.uniform(2.0, 10.0, n)
        nu = rng.uniform(2.0, 10.0, l)
        base = ProblemInstance(
            n_types=n,
            n_schools=l,
            fixed_cost=rng.uniform(0.0, 3.0, (n, l)),
            linear_cost=rng.uniform(0.05, 0.3, (n, l)),
            quad_cost=quad,
            supply=mu,
            capacity=nu,
        )
        instance = PenalizedInstance(base=base, eps=eps, delta=delta)
        if not interior:
            return instance
        _, is_interior = solve_direct(instance)
        if is_interior:
            return instance
    raise ConvergenceError("could not draw an interior contraction instance")


def random_uniform_congestion_instance(
    rng: np.random.Generator, n: int, l: int
) -> PenalizedInstance:
    """Instance passing gates a5 and a6 (uniform congestion, no delta)."""
    beta = rng.uniform(0.5, 4.0)
    eps_ceiling = min(1.0, beta) / l
    eps = rng.uniform(0.05 * eps_ceiling, 0.95 * eps_ceiling, n)
    mu = rng.uniform(2.0, 12.0, n)
    # Keep the linear cost below the penalty pull so draws tend interior.
    linear = 2.0 * eps[:, None] * mu[:, None] * rng.uniform(0.05, 0.6, (n, l))
    base = ProblemInstance(
        n_types=n,
        n_schools=l,
        fixed_cost=rng.uniform(0.0, 3.0, (n, l)),
        linear_cost=linear,
        quad_cost=np.full((n, l), beta),
        supply=mu,
        capacity=rng.uniform(2.0, 12.0, l),
    )
    return PenalizedInstance(base=base, eps=eps, delta=np.zeros(l))


def random_linear_only_instance(
    rng: np.random.Generator, n: int, l: int
) -> PenalizedInstance:
    """Instance passing gate a7 (row-constant linear-only costs)."""
    eps = rng.uniform(0.2, 2.0, n)
    mu = rng.uniform(2.0, 12.0, n)
    c_rows = 2.0 * eps * mu * rng.uniform(0.05, 0.95, n)
    base = ProblemInstance(
        n_types=n,
        n_schools=l,
        fixed_cost=rng.uniform(0.0, 3.0, (n, l)),
        linear_cost=np.repeat(c_rows[:, None], l, axis=1),
        quad_cost=np.zeros((n, l)),
        supply=mu,
        capacity=rng.uniform(2.0, 12.0, l),
    )
    return PenalizedInstance(base=base, eps=eps, delta=np.zeros(l))


def random_uniform_weight_instance(
    rng: np.random.Generator, n: int, l: int
) -> PenalizedInstance:
    """Instance passing gate a8 (uniform congestion and penalty weights)."""
    zeta = rng.uniform(0.05, 1.0)
    rho = 2.0 * n * l * zeta * rng.uniform(1.05, 8.0)
    base = ProblemInstance(
        n_types=n,
        n_schools=l,
        fixed_cost=rng.uniform(0.0, 3.0, (n, l)),
        linear_cost=rng.uniform(0.1, 2.0, (n, l)),
        quad_cost=np.full((n, l), rho),
        supply=rng.uniform(2.0, 12.0, n),
        capacity=rng.uniform(2.0, 12.0, l),
    )
    return PenalizedInstance(base=base, eps=np.full(n, zeta), delta=np.full(l, zeta))
