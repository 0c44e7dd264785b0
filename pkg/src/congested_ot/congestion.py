"""Solver and structural analysis for the quadratic-congestion model.

The model keeps the hard marginal constraints of the linear problem but adds
a strictly convex congestion term, so the optimal plan is unique while the
constraint multipliers are not: the marginal constraints are linearly
dependent, and the interior multiplier system as well as the full KKT
Jacobian are provably singular.  Both singular objects are exposed here with
their exact row-dependency identities, since downstream comparative statics
must go through the envelope gradients instead of an implicit-function solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activeset import marginal_incidence, solve_nonneg_qp
from .errors import (
    ConvergenceError,
    InteriorityError,
    InvalidInstanceError,
    UnbalancedInstanceError,
)
from .instances import (
    Inapplicable,
    KKTCertificate,
    ProblemInstance,
    TransportPlan,
    audit_assumptions,
    balance_check,
    evaluate_cost,
    validate,
)
from .linear import _northwest_corner, solve_linear

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class SingularSystem:
    """Interior multiplier system ``R x = rhs`` with R = diag + coupling.

    ``diag`` holds the N+L diagonal weights (row sums then column sums of
    the half-inverse congestion matrix), ``coupling`` the N x L block of
    ``1/(2 a_ij)``.  R is symmetric and always singular: its first row
    equals the sum of the last L rows minus rows 2..N.
    """

    diag: np.ndarray
    coupling: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        for name in ("diag", "coupling", "rhs"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_types(self) -> int:
        return self.coupling.shape[0]

    @property
    def n_schools(self) -> int:
        return self.coupling.shape[1]

    @property
    def coupling_block(self) -> np.ndarray:
        """The symmetric off-diagonal part T = [[0, coupling], [coupling^T, 0]]."""
        n, l = self.coupling.shape
        t = np.zeros((n + l, n + l))
        t[:n, n:] = self.coupling
        t[n:, :n] = self.coupling.T
        return t

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.diag) + self.coupling_block

    def row_dependency_residual(self) -> float:
        """Max deviation of row 1 from (sum of column rows) - (rows 2..N)."""
        r = self.matrix
        n = self.n_types
        combo = r[n:].sum(axis=0) - r[1:n].sum(axis=0)
        return float(np.max(np.abs(r[0] - combo)))


@dataclass(frozen=True)
class BorderedHessian:
    """KKT Jacobian blocks for the congestion model at an interior optimum.

    ``congestion_diag`` is the row-major diagonal of congestion weights,
    ``incidence`` the (N+L) x (N*L) marginal incidence matrix B.  Every
    column of B has exactly two ones, and B never has full row rank, so the
    assembled block matrix [[D, -B^T], [-B, 0]] is singular.
    """

    congestion_diag: np.ndarray
    incidence: np.ndarray
    n_types: int
    n_schools: int

    def __post_init__(self):
        for name in ("congestion_diag", "incidence"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def matrix(self) -> np.ndarray:
        m = self.congestion_diag.size
        k = self.incidence.shape[0]
        block = np.zeros((m + k, m + k))
        block[:m, :m] = np.diag(self.congestion_diag)
        block[:m, m:] = -self.incidence.T
        block[m:, :m] = -self.incidence
        return block

    def row_dependency_residual(self) -> float:
        b = self.incidence
        n = self.n_types
        combo = b[n:].sum(axis=0) - b[1:n].sum(axis=0)
        return float(np.max(np.abs(b[0] - combo)))


def _require_positive_quad(instance: ProblemInstance):
    if np.any(instance.quad_cost <= 0):
        raise InvalidInstanceError(
            "congestion model requires strictly positive quad_cost; "
            "route purely linear instances to the linear solver"
        )


def build_singular_system(instance: ProblemInstance) -> SingularSystem:
    """Assemble the interior multiplier system for the congestion model."""
    validate(instance).raise_if_invalid()
    _require_positive_quad(instance)
    half_inv = 1.0 / (2.0 * instance.quad_cost)
    diag = np.concatenate([half_inv.sum(axis=1), half_inv.sum(axis=0)])
    scaled_cost = instance.linear_cost * half_inv
    rhs = np.concatenate(
        [instance.supply + scaled_cost.sum(axis=1),
         instance.capacity + scaled_cost.sum(axis=0)]
    )
    return SingularSystem(diag=diag, coupling=half_inv, rhs=rhs)


def build_bordered_hessian(instance: ProblemInstance) -> BorderedHessian:
    """Assemble the KKT Jacobian blocks whose determinant always vanishes."""
    validate(instance).raise_if_invalid()
    _require_positive_quad(instance)
    n, l = instance.n_types, instance.n_schools
    return BorderedHessian(
        congestion_diag=instance.quad_cost.ravel(),
        incidence=marginal_incidence(n, l),
        n_types=n,
        n_schools=l,
    )


def _start_plan(instance: ProblemInstance, start) -> np.ndarray:
    if isinstance(start, np.ndarray):
        return start.astype(float).ravel().copy()
    if start == "linear":
        plan, _ = solve_linear(instance)
        return plan.pi.ravel().copy()
    if start == "northwest":
        flows = _northwest_corner(instance.supply, instance.capacity)
        pi = np.zeros((instance.n_types, instance.n_schools))
        for (i, j), amount in flows.items():
            pi[i, j] = amount
        return pi.ravel()
    raise InvalidInstanceError(f"unknown start {start!r}")


def solve_congestion(
    instance: ProblemInstance,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    start="linear",
):
    """Minimize linear-plus-congestion cost over the balanced transport set.

    Returns ``(plan, certificate)``.  The plan is the unique minimizer of
    the strictly convex objective; the certificate carries minimum-norm
    marginal multipliers (the multiplier system is singular, so they are
    not unique) and elementwise-nonnegative bound multipliers.

    Parameters
    ----------
    tol : stationarity tolerance for the KKT residuals.
    max_iter : active-set iteration cap (default ``50 * N * L``).
    start : ``"linear"`` (vertex of the linear relaxation), ``"northwest"``,
        or an explicit feasible plan; used to seed the working set.
    """
    validate(instance).raise_if_invalid()
    _require_positive_quad(instance)
    balanced, imbalance = balance_check(instance)
    if not balanced:
        raise UnbalancedInstanceError(
            f"congestion model requires balance; supply - capacity = {imbalance:g}"
        )
    n, l = instance.n_types, instance.n_schools
    q_matrix = np.diag(2.0 * instance.quad_cost.ravel())
    g = instance.linear_cost.ravel()
    incidence = marginal_incidence(n, l)
    f = np.concatenate([instance.supply, instance.capacity])
    x0 = _start_plan(instance, start)

    result = solve_nonneg_qp(
        q_matrix, g, incidence, f, x0, tol=tol, max_iter=max_iter or 50 * n * l
    )
    x = result.x
    z = result.eq_multipliers
    gamma_raw = result.gradient - incidence.T @ z
    gamma = np.maximum(gamma_raw, 0.0)
    free = x > 0.0
    stationarity = float(
        max(
            np.max(np.abs(gamma_raw[free]), initial=0.0),
            np.max(-gamma_raw, initial=0.0),
        )
    )
    complementarity = float(np.max(np.abs(gamma * x), initial=0.0))
    if stationarity > max(tol, 1e-7) or complementarity > max(tol, 1e-7):
        raise ConvergenceError(
            f"KKT residuals not met: stationarity {stationarity:.3e}, "
            f"complementarity {complementarity:.3e}"
        )
    pi = x.reshape(n, l)
    plan = TransportPlan(pi=pi, objective=evaluate_cost(instance, pi, "congestion"))
    certificate = KKTCertificate(
        xi=z[:n],
        lam=z[n:],
        gamma=gamma.reshape(n, l),
        stationarity_residual=stationarity,
        complementarity_residual=complementarity,
        iterations=result.iterations,
    )
    return plan, certificate


def top_choice_plan(instance: ProblemInstance):
    """Concentrated optimal plan when every type has a clear top school.

    On square markets with one common marginal mass, distinct strict
    top-choice columns, and a runner-up cost gap exceeding the congestion
    spread (gates a1-a3, integral marginals), the integer-optimal plan puts
    each type's whole mass on its top choice.  Returns the plan, or
    :class:`Inapplicable` naming the failed gates.
    """
    validate(instance).raise_if_invalid()
    audit = audit_assumptions(instance)
    failed = [name for name in ("a1", "a2", "a3") if not getattr(audit, name).ok]
    if not instance.integral_marginals():
        failed.append("integral marginals")
    if failed:
        return Inapplicable(
            reason="top-choice concentration needs gates "
            + ", ".join(failed)
            + " to hold",
            gates=tuple(failed),
        )
    tops = np.argmin(instance.linear_cost, axis=1)
    pi = np.zeros((instance.n_types, instance.n_schools))
    pi[np.arange(instance.n_types), tops] = instance.supply
    return TransportPlan(pi=pi, objective=evaluate_cost(instance, pi, "congestion"))


def envelope_gradients(instance: ProblemInstance, plan: TransportPlan, tol: float = 1e-9):
    """Value-function gradients at an interior congestion optimum.

    At an interior optimum the optimal-value derivative with respect to a
    linear cost equals the matched mass, and with respect to a congestion
    weight equals its square.  Raises :class:`InteriorityError` when any
    cell is at the boundary, where these identities are not claimed.
    """
    pi = plan.pi if isinstance(plan, TransportPlan) else np.asarray(plan, float)
    if pi.shape != (instance.n_types, instance.n_schools):
        raise InvalidInstanceError(
            f"plan has shape {pi.shape}, expected "
            f"{(instance.n_types, instance.n_schools)}"
        )
    if np.any(pi <= tol):
        worst = np.unravel_index(int(np.argmin(pi)), pi.shape)
        raise InteriorityError(
            f"envelope gradients need a strictly interior plan; cell {worst} "
            f"is at {pi[worst]:.3e}"
        )
    return pi.copy(), pi.copy() ** 2
