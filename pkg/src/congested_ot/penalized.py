"""End-to-end machinery for the penalized matching model.

The hard marginal constraints are replaced by weighted squared-deviation
penalties, so interior optima solve a single symmetric positive-definite
linear system ``A pi = b``.  This module assembles that system, solves it by
factorization, by truncated series expansion, and by a sweep of rank-1
inverse updates, provides the closed forms available in restricted parameter
regimes, and evaluates a-priori entry bounds for the uniform-weight regime.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .activeset import solve_nonneg_qp
from .errors import (
    AssumptionGateError,
    ConvergenceError,
    InvalidInstanceError,
)
from .instances import (
    Inapplicable,
    KKTCertificate,
    PenalizedInstance,
    TransportPlan,
    audit_assumptions,
    ensure_dense_cap,
    evaluate_cost,
    validate,
)

DEFAULT_TOL = 1e-9
PIVOT_GUARD = 1e-12

# Thresholds for the ill-conditioning warning in is_positive_definite.
_PIVOT_RATIO_WARN = 1e10
_PIVOT_ABS_WARN = 1e-10


@dataclass(frozen=True)
class PenalizedSystem:
    """Stationarity system ``A pi = b`` in row-major cell order.

    ``A`` adds the supply-penalty row blocks and capacity-penalty column
    combs onto the congestion diagonal; its three parts are retrievable via
    :meth:`diag_part`, :meth:`supply_part`, and :meth:`capacity_part`, and
    ``A == diag_part() + supply_part() + capacity_part()`` exactly.
    """

    a_matrix: np.ndarray
    b: np.ndarray
    quad_diag: np.ndarray
    eps: np.ndarray
    delta: np.ndarray
    n_types: int
    n_schools: int

    def __post_init__(self):
        for name in ("a_matrix", "b", "quad_diag", "eps", "delta"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_cells(self) -> int:
        return self.n_types * self.n_schools

    def diag_part(self) -> np.ndarray:
        return np.diag(self.quad_diag)

    def supply_part(self) -> np.ndarray:
        """Block-diagonal penalty coupling of cells sharing a supply row."""
        m, l = self.n_cells, self.n_schools
        out = np.zeros((m, m))
        for i in range(self.n_types):
            out[i * l : (i + 1) * l, i * l : (i + 1) * l] = self.eps[i]
        return out

    def capacity_part(self) -> np.ndarray:
        """Strided penalty coupling of cells sharing a capacity column."""
        m, l = self.n_cells, self.n_schools
        out = np.zeros((m, m))
        for j in range(l):
            out[np.ix_(range(j, m, l), range(j, m, l))] = self.delta[j]
        return out


@dataclass(frozen=True)
class NeumannTrace:
    """Diagnostics of a truncated-series solve.

    ``error_bounds[n]`` is the a-priori geometric bound on the sup-norm
    error of partial sum n; it is nonincreasing in n.  ``measured_errors``
    holds the observed distance to the factorization solution.
    """

    n_terms: int
    spectral_norm: float
    gate_margin: float
    gate_ok: bool
    error_bounds: np.ndarray
    measured_errors: np.ndarray
    first_below_target: int | None

    def __post_init__(self):
        for name in ("error_bounds", "measured_errors"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class EntryBounds:
    """A-priori bounds for the uniform-weight regime.

    ``c1 <= every entry of A^{-1} <= c2``, and no plan entry exceeds
    ``plan_bound``.
    """

    c1: float
    c2: float
    plan_bound: float


def _require_positive_quad(instance: PenalizedInstance):
    if np.any(instance.base.quad_cost <= 0):
        raise InvalidInstanceError("penalized system requires strictly positive quad_cost")


def assemble(instance: PenalizedInstance) -> PenalizedSystem:
    """Build ``A = diag + row blocks + column combs`` and its right-hand side.

    Both parts are written by index arithmetic; no dense products are
    formed.  ``b`` carries the penalty pull toward the marginals minus half
    the linear cost.
    """
    validate(instance).raise_if_invalid()
    _require_positive_quad(instance)
    base = instance.base
    n, l = base.n_types, base.n_schools
    m = n * l
    ensure_dense_cap(m)
    a_matrix = np.diag(base.quad_cost.ravel().astype(float))
    for i in range(n):
        a_matrix[i * l : (i + 1) * l, i * l : (i + 1) * l] += instance.eps[i]
    for j in range(l):
        a_matrix[j::l, j::l] += instance.delta[j]
    b = (
        instance.eps[:, None] * base.supply[:, None]
        + instance.delta[None, :] * base.capacity[None, :]
        - base.linear_cost / 2.0
    ).ravel()
    return PenalizedSystem(
        a_matrix=a_matrix,
        b=b,
        quad_diag=base.quad_cost.ravel(),
        eps=instance.eps,
        delta=instance.delta,
        n_types=n,
        n_schools=l,
    )


def is_positive_definite(system: PenalizedSystem) -> bool:
    """Whether a Cholesky factorization succeeds with positive pivots.

    Emits a :class:`RuntimeWarning` when the pivots are so small or so
    spread out that downstream solves should be treated as ill-conditioned.
    """
    try:
        factor = np.linalg.cholesky(system.a_matrix)
    except np.linalg.LinAlgError:
        return False
    pivots = np.diag(factor)
    smallest, largest = float(pivots.min()), float(pivots.max())
    if smallest**2 < _PIVOT_ABS_WARN or (largest / smallest) ** 2 > _PIVOT_RATIO_WARN:
        warnings.warn(
            f"system is near-singular: pivot range [{smallest:.3e}, {largest:.3e}]",
            RuntimeWarning,
            stacklevel=2,
        )
    return True


def _cholesky_solve(a_matrix: np.ndarray, b: np.ndarray) -> np.ndarray:
    factor = np.linalg.cholesky(a_matrix)
    return np.linalg.solve(factor.T, np.linalg.solve(factor, b))


def solve_direct(instance: PenalizedInstance, tol: float = DEFAULT_TOL):
    """Solve the stationarity system by symmetric factorization.

    Returns ``(plan, interior)``.  When the factorization solution is
    strictly positive it is the unique optimum and ``interior`` is True;
    otherwise the bound-constrained solver takes over and ``interior`` is
    False.
    """
    system = assemble(instance)
    try:
        candidate = _cholesky_solve(system.a_matrix, system.b)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"symmetric factorization failed: {exc}") from exc
    if np.all(candidate > 0.0):
        pi = candidate.reshape(instance.n_types, instance.n_schools)
        plan = TransportPlan(pi=pi, objective=evaluate_cost(instance, pi, "penalized"))
        return plan, True
    plan, _ = solve_penalized_qp(instance, tol=tol)
    return plan, False


def solve_penalized_qp(
    instance: PenalizedInstance, tol: float = DEFAULT_TOL, max_iter: int | None = None
):
    """Minimize the penalized objective over the nonnegative orthant.

    Returns ``(plan, certificate)``.  There are no marginal constraints in
    this model, so the certificate's marginal multipliers are zero and the
    bound multipliers are ``2 * (A pi - b)`` clipped at zero, complementary
    to the plan within tolerance.
    """
    system = assemble(instance)
    n, l = instance.n_types, instance.n_schools
    x0 = np.maximum(system.b / np.diag(system.a_matrix), 0.0)
    result = solve_nonneg_qp(
        system.a_matrix,
        -system.b,
        np.zeros((0, system.n_cells)),
        np.zeros(0),
        x0,
        tol=tol,
        max_iter=max_iter or 50 * n * l,
    )
    x = result.x
    gamma_raw = 2.0 * (system.a_matrix @ x - system.b)
    gamma = np.maximum(gamma_raw, 0.0)
    free = x > 0.0
    stationarity = float(
        max(
            np.max(np.abs(gamma_raw[free]), initial=0.0),
            np.max(-gamma_raw, initial=0.0),
        )
    )
    complementarity = float(np.max(np.abs(gamma * x), initial=0.0))
    pi = x.reshape(n, l)
    plan = TransportPlan(pi=pi, objective=evaluate_cost(instance, pi, "penalized"))
    certificate = KKTCertificate(
        xi=np.zeros(n),
        lam=np.zeros(l),
        gamma=gamma.reshape(n, l),
        stationarity_residual=stationarity,
        complementarity_residual=complementarity,
        iterations=result.iterations,
    )
    return plan, certificate


def _apply_coupling(t: np.ndarray, eps: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Multiply the penalty coupling X onto a cell matrix via its sums."""
    return eps[:, None] * t.sum(axis=1, keepdims=True) + delta[None, :] * t.sum(
        axis=0, keepdims=True
    )


def coupling_spectral_norm(
    instance: PenalizedInstance, max_iter: int = 200, tol: float = 1e-12
) -> float:
    """Spectral norm of ``D^{-1} X`` via power iteration.

    Runs on the symmetric similarity ``D^{-1/2} X D^{-1/2}`` (same
    spectrum), applied by index arithmetic, with a deterministic start
    vector.
    """
    base = instance.base
    n, l = base.n_types, base.n_schools
    if not np.any(instance.eps) and not np.any(instance.delta):
        return 0.0
    root_d = np.sqrt(base.quad_cost)
    v = 1.0 + 0.001 * np.arange(n * l)
    v /= np.linalg.norm(v)
    value = 0.0
    for _ in range(max_iter):
        w = v.reshape(n, l) / root_d
        w = _apply_coupling(w, instance.eps, instance.delta) / root_d
        w = w.ravel()
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v_new = w / norm
        new_value = float(v_new @ w)
        if abs(new_value - value) <= tol * max(1.0, abs(new_value)):
            return new_value
        value = new_value
        v = v_new
    return value


def neumann_solve(instance: PenalizedInstance, eps_target: float):
    """Solve the stationarity system by its alternating geometric series.

    The iterates apply ``D^{-1} X`` repeatedly (never forming matrix
    powers) and stop at the a-priori term count that guarantees a sup-norm
    error below ``eps_target``.  Returns ``(plan, trace)``; the trace
    records the geometric bound and the measured distance to the
    factorization solution at every partial sum.

    Raises
    ------
    AssumptionGateError
        Naming gate A4 when the measured contraction norm is >= 1, in which
        case the series diverges.
    """
    if eps_target <= 0:
        raise InvalidInstanceError("eps_target must be positive")
    system = assemble(instance)
    base = instance.base
    n, l = base.n_types, base.n_schools
    audit = audit_assumptions(instance)
    q = coupling_spectral_norm(instance)
    lhs = float(instance.eps.max(initial=0.0) * l + instance.delta.max(initial=0.0) * n)
    margin = float(base.quad_cost.min()) - lhs
    if q >= 1.0:
        raise AssumptionGateError(
            "A4",
            "series solver refused: measured contraction norm "
            f"{q:.6g} >= 1 (weighted-max margin {margin:g}; gate requires "
            "max(eps)*L + max(delta)*N < min(a))",
        )
    if not audit.a4.ok:
        warnings.warn(
            f"gate A4 fails ({audit.a4.detail}) but the measured contraction "
            f"norm {q:.6g} is below one; proceeding",
            RuntimeWarning,
            stacklevel=2,
        )

    direct = _cholesky_solve(system.a_matrix, system.b).reshape(n, l)
    d_inv_b = (system.b / system.quad_diag).reshape(n, l)
    scale = float(np.max(np.abs(d_inv_b)))

    if q == 0.0 or scale == 0.0:
        pi = d_inv_b
        measured = np.array([float(np.max(np.abs(pi - direct)))])
        trace = NeumannTrace(
            n_terms=0,
            spectral_norm=q,
            gate_margin=margin,
            gate_ok=audit.a4.ok,
            error_bounds=np.array([0.0]),
            measured_errors=measured,
            first_below_target=0 if measured[0] < eps_target else None,
        )
        plan = TransportPlan(pi=pi, objective=evaluate_cost(instance, pi, "penalized"))
        return plan, trace

    ratio = eps_target * (1.0 - q) / (math.sqrt(n * l) * scale)
    n_terms = max(1, math.ceil(abs(math.log(ratio) / math.log(q))))

    quad = base.quad_cost
    term = d_inv_b.copy()
    partial = term.copy()
    bounds = [math.sqrt(n * l) * q * scale / (1.0 - q)]
    measured = [float(np.max(np.abs(partial - direct)))]
    first_hit = 0 if measured[0] < eps_target else None
    for step in range(1, n_terms + 1):
        term = -_apply_coupling(term, instance.eps, instance.delta) / quad
        partial += term
        bounds.append(math.sqrt(n * l) * q ** (step + 1) * scale / (1.0 - q))
        measured.append(float(np.max(np.abs(partial - direct))))
        if first_hit is None and measured[-1] < eps_target:
            first_hit = step
    trace = NeumannTrace(
        n_terms=n_terms,
        spectral_norm=q,
        gate_margin=margin,
        gate_ok=audit.a4.ok,
        error_bounds=np.asarray(bounds),
        measured_errors=np.asarray(measured),
        first_below_target=first_hit,
    )
    plan = TransportPlan(
        pi=partial, objective=evaluate_cost(instance, partial, "penalized")
    )
    return plan, trace


def sherman_morrison_inverse(instance: PenalizedInstance) -> np.ndarray:
    """Invert the stationarity matrix by a sweep of rank-1 updates.

    Starts from the inverse of the congestion diagonal and folds in one
    rank-1 update per nonzero penalty weight (N + L of them at most), each
    touching the full dense inverse once.  Zero weights are skipped, so
    with all penalties zero this returns ``diag(1/a)`` untouched.
    """
    validate(instance).raise_if_invalid()
    _require_positive_quad(instance)
    n, l = instance.n_types, instance.n_schools
    ensure_dense_cap(n * l)
    ainv = np.diag(1.0 / instance.base.quad_cost.ravel())
    failed = kernels.smw_sweep(
        ainv,
        np.ascontiguousarray(instance.eps, dtype=float),
        np.ascontiguousarray(instance.delta, dtype=float),
        n,
        l,
        PIVOT_GUARD,
    )
    if failed >= 0:
        kind = "supply" if failed < n else "capacity"
        index = failed if failed < n else failed - n
        raise ConvergenceError(
            f"rank-1 update pivot vanished at {kind} weight {index} "
            f"(update {failed + 1} of {n + l})"
        )
    return ainv


def _gate_a5_a6(instance: PenalizedInstance):
    audit = audit_assumptions(instance)
    failed = [name for name in ("a5", "a6") if not getattr(audit, name).ok]
    details = "; ".join(
        f"{name}: {getattr(audit, name).detail}" for name in failed
    )
    return failed, details


def closed_form_inverse(instance: PenalizedInstance):
    """Exact inverse for uniform congestion without capacity penalties.

    With ``delta == 0``, ``a == beta`` and ``L * eps_i < min(1, beta)``,
    the inverse is block diagonal: ``I/beta`` plus a constant rank-1
    correction ``-eps_i / (beta * (beta + L * eps_i))`` on each supply
    block.  Assembled by index arithmetic.  Returns the matrix, or
    :class:`Inapplicable` naming the failed gates.
    """
    validate(instance).raise_if_invalid()
    failed, details = _gate_a5_a6(instance)
    if failed:
        return Inapplicable(
            reason=f"closed-form inverse needs gates {', '.join(failed)} ({details})",
            gates=tuple(failed),
        )
    n, l = instance.n_types, instance.n_schools
    ensure_dense_cap(n * l)
    beta = float(instance.base.quad_cost.flat[0])
    ainv = np.zeros((n * l, n * l))
    np.fill_diagonal(ainv, 1.0 / beta)
    for i in range(n):
        block = slice(i * l, (i + 1) * l)
        ainv[block, block] -= instance.eps[i] / (beta * (beta + l * instance.eps[i]))
    return ainv


def closed_form_plan(instance: PenalizedInstance):
    """Closed-form optimal plan in the regime of :func:`closed_form_inverse`.

    ``pi_ij = b_ij / beta - sum_t b_it * eps_i / (beta^2 + L * eps_i * beta)``,
    valid only when every entry comes out strictly positive; otherwise
    returns :class:`Inapplicable`.
    """
    validate(instance).raise_if_invalid()
    failed, details = _gate_a5_a6(instance)
    if failed:
        return Inapplicable(
            reason=f"closed-form plan needs gates {', '.join(failed)} ({details})",
            gates=tuple(failed),
        )
    system = assemble(instance)
    n, l = instance.n_types, instance.n_schools
    beta = float(instance.base.quad_cost.flat[0])
    b = system.b.reshape(n, l)
    correction = b.sum(axis=1) * instance.eps / (beta**2 + l * instance.eps * beta)
    pi = b / beta - correction[:, None]
    if np.any(pi <= 0.0):
        worst = np.unravel_index(int(np.argmin(pi)), pi.shape)
        return Inapplicable(
            reason=f"closed-form plan entry {worst} is {pi[worst]:.6g} <= 0; "
            "positivity proviso fails",
            gates=("positivity",),
        )
    return TransportPlan(pi=pi, objective=evaluate_cost(instance, pi, "penalized"))


def aggregate_mass_closed_form(instance: PenalizedInstance) -> np.ndarray:
    """Optimal matched mass per type under row-constant linear-only costs.

    Requires gate a7 (no capacity penalties, no congestion, row-constant
    linear costs with ``0 < c_i < 2 eps_i mu_i``).  The per-type optimum
    trades the linear cost against the under-fulfillment penalty:
    ``x_i = (2 eps_i mu_i - c_i) / (2 eps_i)``, strictly between 0 and
    ``mu_i``.
    """
    validate(instance).raise_if_invalid()
    audit = audit_assumptions(instance)
    if not audit.a7.ok:
        raise AssumptionGateError(
            "A7", f"aggregate-mass closed form refused: {audit.a7.detail}"
        )
    mu = instance.base.supply
    c_rows = instance.base.linear_cost[:, 0]
    x = (2.0 * instance.eps * mu - c_rows) / (2.0 * instance.eps)
    return x


def uniform_coupling_matrix(n_types: int, n_schools: int) -> np.ndarray:
    """Integer coupling pattern of the penalty matrix under uniform weights.

    Entry (i, j), 1-based: 2 on the diagonal, 1 when the cells share a
    size-N block (``ceil(i/N) == ceil(j/N)``) or are congruent mod N, else
    0.  Under gate a8 the full system is ``rho * I + zeta * Y`` with Y this
    matrix (cells grouped by school; for N != L the row-major assembly is
    the same matrix up to the cell-order permutation).  Every row sums to
    ``2 + (N - 1) + (L - 1)``.
    """
    if n_types <= 0 or n_schools <= 0:
        raise InvalidInstanceError("dimensions must be positive")
    m = n_types * n_schools
    y = np.zeros((m, m), dtype=np.int64)
    for i in range(1, m + 1):
        for j in range(1, m + 1):
            if i == j:
                y[i - 1, j - 1] = 2
            elif math.ceil(i / n_types) == math.ceil(j / n_types) or (
                i % n_types == j % n_types
            ):
                y[i - 1, j - 1] = 1
    return y


def series_entry_bounds(n: int, l: int, zeta: float, rho: float):
    """Entry bounds on the inverse in the uniform-weight regime.

    Derived by bounding the alternating series of coupling powers with the
    exact per-power extremes: even powers are sandwiched between
    ``(NL)^m / NL`` and ``(2NL)^{2m} / NL``, odd powers likewise, and the
    identity and first-order terms are kept exactly.  Requires
    ``rho > 2 N L zeta > 0``.
    """
    m = n * l
    q = zeta / rho
    even_upper = 4 * zeta**2 * n**2 * l**2 / (rho**2 - 4 * zeta**2 * n**2 * l**2)
    even_lower = zeta**2 / (rho**2 - zeta**2 * m)
    odd_upper = 8 * zeta**3 * n**2 * l**2 / (rho * (rho**2 - 4 * zeta**2 * n**2 * l**2))
    odd_lower = zeta**3 / (rho * (rho**2 - zeta**2 * m))
    c2 = (1.0 + even_upper - odd_lower) / rho
    c1 = (-2.0 * q + even_lower - odd_upper) / rho
    return c1, c2


def entry_bounds(instance: PenalizedInstance) -> EntryBounds:
    """A-priori bounds for the uniform-weight regime (gate a8).

    ``c1`` and ``c2`` bound every entry of the inverse, and ``plan_bound``
    bounds the sup-norm of the optimal plan by the triangle inequality:
    N*L times the largest bound magnitude times the largest right-hand-side
    magnitude.
    """
    validate(instance).raise_if_invalid()
    audit = audit_assumptions(instance)
    if not audit.a8.ok:
        raise AssumptionGateError("A8", f"entry bounds refused: {audit.a8.detail}")
    n, l = instance.n_types, instance.n_schools
    zeta = float(instance.eps[0])
    rho = float(instance.base.quad_cost.flat[0])
    c1, c2 = series_entry_bounds(n, l, zeta, rho)
    system = assemble(instance)
    c_tilde = max(abs(c1), abs(c2)) * float(np.max(np.abs(system.b)))
    return EntryBounds(c1=c1, c2=c2, plan_bound=n * l * c_tilde)
