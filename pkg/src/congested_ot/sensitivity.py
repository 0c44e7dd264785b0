"""Comparative statics for interior optima of the penalized model.

The penalized model is the only one of the three with smooth comparative
statics: its stationarity matrix is positive definite, so an interior
optimum responds smoothly to cost perturbations.  (The hard-constrained
congestion model has a provably singular KKT Jacobian; only its envelope
gradients are available, in :mod:`congested_ot.congestion`.)
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InteriorityError, InvalidInstanceError
from .instances import (
    PenalizedInstance,
    TransportPlan,
    audit_assumptions,
    validate,
)
from .penalized import assemble, solve_direct

INTERIOR_TOL = 1e-9


@dataclass(frozen=True)
class SensitivityMatrix:
    """Plan sensitivities to linear-cost and congestion-weight changes.

    Both blocks are (N*L) x (N*L) in row-major cell order and are
    normalized against the assembled system matrix: the exact blocks solve
    ``A S_c = -I`` and ``A S_a = -2 diag(pi)``.  Because the stationarity
    right-hand side enters the linear cost at half weight (``b`` carries
    ``-c/2``), the realized plan change per unit parameter change is half of
    each block; use :meth:`plan_response` for direct comparison against
    re-solves or finite differences.
    """

    dpi_dc: np.ndarray
    dpi_da: np.ndarray
    order: str

    def __post_init__(self):
        for name in ("dpi_dc", "dpi_da"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def plan_response(self):
        """Blocks rescaled to the measurable plan derivative."""
        return 0.5 * self.dpi_dc, 0.5 * self.dpi_da


def _interior_pi(instance, plan, tol):
    pi = plan.pi if isinstance(plan, TransportPlan) else np.asarray(plan, float)
    if pi.shape != (instance.n_types, instance.n_schools):
        raise InvalidInstanceError(
            f"plan has shape {pi.shape}, expected "
            f"{(instance.n_types, instance.n_schools)}"
        )
    if np.any(pi <= tol):
        worst = np.unravel_index(int(np.argmin(pi)), pi.shape)
        raise InteriorityError(
            f"sensitivities are defined at interior optima only; cell {worst} "
            f"is at {pi[worst]:.3e}"
        )
    return pi


def sensitivity_exact(
    instance: PenalizedInstance, plan: TransportPlan, tol: float = INTERIOR_TOL
) -> SensitivityMatrix:
    """Exact sensitivity blocks at an interior optimum.

    Solves ``A S_c = -I`` and ``A S_a = -2 diag(pi)`` with the assembled
    positive-definite system matrix.
    """
    pi = _interior_pi(instance, plan, tol)
    system = assemble(instance)
    m = system.n_cells
    s_c = np.linalg.solve(system.a_matrix, -np.eye(m))
    s_a = s_c * (2.0 * pi.ravel())[None, :]
    return SensitivityMatrix(dpi_dc=s_c, dpi_da=s_a, order="exact")


def sensitivity_truncated(
    instance: PenalizedInstance,
    plan: TransportPlan,
    order: int,
    tol: float = INTERIOR_TOL,
) -> SensitivityMatrix:
    """Truncated-series sensitivity blocks (orders 0 and 1).

    Order 0 keeps only the decoupled congestion diagonal, so all
    cross-derivatives vanish.  Order 1 adds the first coupling correction,
    giving the substitution pattern: own-cost entries
    ``-(a_ij - eps_i - delta_j) / a_ij^2``, same-row entries
    ``eps_i / a_ij^2``, same-column entries ``delta_j / a_ij^2``, zero when
    both indices differ.  Warns when the contraction gate a4 fails, since
    the truncation then has no accuracy rationale.
    """
    if order not in (0, 1):
        raise InvalidInstanceError(f"truncation order must be 0 or 1, got {order!r}")
    pi = _interior_pi(instance, plan, tol)
    audit = audit_assumptions(instance)
    if not audit.a4.ok:
        warnings.warn(
            f"truncated sensitivities without the contraction gate: {audit.a4.detail}",
            RuntimeWarning,
            stacklevel=2,
        )
    system = assemble(instance)
    m = system.n_cells
    inv_diag = 1.0 / system.quad_diag
    approx_inv = np.diag(inv_diag)
    if order == 1:
        coupling = system.supply_part() + system.capacity_part()
        approx_inv = approx_inv - (inv_diag**2)[:, None] * coupling
    s_c = -approx_inv
    s_a = s_c * (2.0 * pi.ravel())[None, :]
    return SensitivityMatrix(dpi_dc=s_c, dpi_da=s_a, order=f"order{order}")


def finite_difference_check(
    instance: PenalizedInstance, kind: str, row: int, col: int, step: float
) -> np.ndarray:
    """Central-difference plan derivative for one cost coordinate.

    Re-solves the instance at ``theta +/- step`` for coordinate
    ``(kind, row, col)`` with ``kind`` in ``{"c", "a"}`` and returns the
    (N, L) derivative estimate.  Interiority must hold at both perturbed
    solves; losing it is reported, never clamped over.
    """
    if step == 0:
        raise InvalidInstanceError("perturbation step must be nonzero")
    if kind not in ("c", "a"):
        raise InvalidInstanceError(f"coordinate kind must be 'c' or 'a', got {kind!r}")
    base = instance.base
    if not (0 <= row < base.n_types and 0 <= col < base.n_schools):
        raise InvalidInstanceError(f"coordinate ({row}, {col}) out of range")

    solutions = []
    field = "linear_cost" if kind == "c" else "quad_cost"
    for sign in (+1.0, -1.0):
        matrix = getattr(base, field).copy()
        matrix[row, col] += sign * step
        perturbed = PenalizedInstance(
            base=dataclasses.replace(base, **{field: matrix}),
            eps=instance.eps,
            delta=instance.delta,
        )
        plan, interior = solve_direct(perturbed)
        if not interior:
            raise InteriorityError(
                f"perturbing {kind}[{row},{col}] by {sign * step:+g} leaves the "
                "interior regime; shrink the step"
            )
        solutions.append(plan.pi)
    return (solutions[0] - solutions[1]) / (2.0 * step)


def marginal_response_order0(instance: PenalizedInstance) -> dict:
    """First-order plan responses to the penalty weights and marginals.

    Computed from the decoupled approximation, so they are approximate by
    construction; all four blocks are elementwise nonnegative.  Keys:
    ``"eps"``, ``"delta"``, ``"mu"``, ``"nu"``; each value is the (N, L)
    response of cell (i, j) to its own row/column parameter.
    """
    validate(instance).raise_if_invalid()
    base = instance.base
    a = base.quad_cost
    return {
        "eps": base.supply[:, None] / a,
        "delta": base.capacity[None, :] / a,
        "mu": instance.eps[:, None] / a,
        "nu": instance.delta[None, :] / a,
    }


def sign_table_verdict(instance: PenalizedInstance, matrix: SensitivityMatrix) -> dict:
    """Check the substitution sign pattern on a cost-sensitivity block.

    Own derivatives must be negative, same-row (same-column) cross
    derivatives must carry the sign of the corresponding supply (capacity)
    weight, and disjoint-cell derivatives must vanish.
    """
    n, l = instance.n_types, instance.n_schools
    s = matrix.dpi_dc
    own_ok = bool(np.all(np.diag(s) < 0))
    row_ok = col_ok = zero_ok = True
    for p in range(n * l):
        i, j = divmod(p, l)
        for q in range(n * l):
            k, t = divmod(q, l)
            if p == q:
                continue
            value = s[p, q]
            if i == k:
                expected_pos = instance.eps[i] > 0
                row_ok &= (value > 0) if expected_pos else (value == 0)
            elif j == t:
                expected_pos = instance.delta[j] > 0
                col_ok &= (value > 0) if expected_pos else (value == 0)
            else:
                zero_ok &= value == 0
    return {
        "own_negative": own_ok,
        "same_row_positive": bool(row_ok),
        "same_column_positive": bool(col_ok),
        "disjoint_zero": bool(zero_ok),
        "holds": bool(own_ok and row_ok and col_ok and zero_ok),
    }
