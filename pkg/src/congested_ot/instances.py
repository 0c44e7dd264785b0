"""Problem instances, transport plans, optimality certificates, and audits.

All types are immutable after construction and every operation here is a pure
function, so shared instances are safe to use from concurrent solves.
Constructors only coerce values to read-only float arrays; structural checks
live in :func:`validate` so that malformed data can be inspected and reported
instead of blowing up at construction time.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInstanceError, SizeCapError

# Relative weight between matching cost and the marginal-deviation penalties
# in the penalized model.  Fixed; generalizing it is out of scope.
PENALTY_TRADE_OFF = 0.5

MODELS = ("linear", "congestion", "penalized")

_DEFAULT_CELL_CAP = 4096

# Tolerances for balance / nonnegativity checks (double-precision headroom).
BALANCE_RTOL = 1e-9
NONNEG_ATOL = 1e-12
INTEGRALITY_ATOL = 1e-9


def dense_cell_cap() -> int:
    """Largest N*L for which dense (N*L)^2 working sets may be allocated."""
    raw = os.environ.get("CONGESTED_OT_MAX_NL", "")
    try:
        return int(raw) if raw else _DEFAULT_CELL_CAP
    except ValueError:
        return _DEFAULT_CELL_CAP


def ensure_dense_cap(n_cells: int) -> None:
    cap = dense_cell_cap()
    if n_cells > cap:
        raise SizeCapError(
            f"dense working set needs N*L = {n_cells} cells, cap is {cap} "
            "(override with CONGESTED_OT_MAX_NL)"
        )


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ProblemInstance:
    """A discrete matching market with quadratic congestion costs.

    Parameters
    ----------
    n_types, n_schools : int
        Number of individual types N and of schools L.
    fixed_cost : (N, L) array
        Per-pair fixed cost; excluded from optimization but included in
        reported objective values.
    linear_cost : (N, L) array
        Constant marginal matching cost per matched unit.
    quad_cost : (N, L) array
        Congestion coefficient on the squared matched mass.  Must be
        strictly positive for the congestion and penalized solvers.
    supply : (N,) array
        Mass of each type (row marginal).
    capacity : (L,) array
        Seats at each school (column marginal).
    """

    n_types: int
    n_schools: int
    fixed_cost: np.ndarray
    linear_cost: np.ndarray
    quad_cost: np.ndarray
    supply: np.ndarray
    capacity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "fixed_cost", _frozen(self.fixed_cost))
        object.__setattr__(self, "linear_cost", _frozen(self.linear_cost))
        object.__setattr__(self, "quad_cost", _frozen(self.quad_cost))
        object.__setattr__(self, "supply", _frozen(self.supply))
        object.__setattr__(self, "capacity", _frozen(self.capacity))

    @property
    def n_cells(self) -> int:
        return self.n_types * self.n_schools

    @property
    def total_supply(self) -> float:
        return float(np.sum(self.supply))

    @property
    def total_capacity(self) -> float:
        return float(np.sum(self.capacity))

    def integral_marginals(self) -> bool:
        """True when every marginal is an integer up to rounding noise."""
        both = np.concatenate([self.supply, self.capacity])
        return bool(np.all(np.abs(both - np.round(both)) <= INTEGRALITY_ATOL))


@dataclass(frozen=True)
class PenalizedInstance:
    """A :class:`ProblemInstance` plus weights for the marginal penalties.

    ``eps[i]`` prices squared under/over-fulfillment of supply row i,
    ``delta[j]`` prices squared deviation from school j's capacity.  The
    trade-off weight between matching cost and penalties is fixed at 1/2
    (:data:`PENALTY_TRADE_OFF`), not a field.
    """

    base: ProblemInstance
    eps: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eps", _frozen(self.eps))
        object.__setattr__(self, "delta", _frozen(self.delta))

    @property
    def n_types(self) -> int:
        return self.base.n_types

    @property
    def n_schools(self) -> int:
        return self.base.n_schools

    @property
    def n_cells(self) -> int:
        return self.base.n_cells


@dataclass(frozen=True)
class TransportPlan:
    """A matching matrix together with the objective that produced it."""

    pi: np.ndarray
    objective: float

    def __post_init__(self):
        object.__setattr__(self, "pi", _frozen(self.pi))
        object.__setattr__(self, "objective", float(self.objective))

    @property
    def row_sums(self) -> np.ndarray:
        return self.pi.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.pi.sum(axis=0)

    def support(self, tol: float = 1e-9):
        """Indices of cells carrying more than ``tol`` mass."""
        return [tuple(ij) for ij in np.argwhere(self.pi > tol)]


@dataclass(frozen=True)
class KKTCertificate:
    """First-order optimality data for a solved plan.

    ``xi`` and ``lam`` are the supply/capacity multipliers, ``gamma`` the
    nonnegativity multipliers.  The marginal constraints are linearly
    dependent, so (xi, lam) are not unique; solvers return the minimum-norm
    pair.  ``gamma`` is elementwise nonnegative and complementary to the
    plan within ``complementarity_residual``.
    """

    xi: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    stationarity_residual: float
    complementarity_residual: float
    iterations: int = 0

    def __post_init__(self):
        object.__setattr__(self, "xi", _frozen(self.xi))
        object.__setattr__(self, "lam", _frozen(self.lam))
        object.__setattr__(self, "gamma", _frozen(self.gamma))


class Flag(NamedTuple):
    ok: bool
    detail: str


@dataclass(frozen=True)
class Inapplicable:
    """Returned when a specialized closed form does not cover an instance.

    Carries the human-readable reason and the names of the failed gates, so
    callers can distinguish "outside the regime" from a solver error.
    """

    reason: str
    gates: tuple = ()


@dataclass(frozen=True)
class AssumptionAudit:
    """Boolean gates for the specialized solution paths, with diagnostics.

    Each flag is recomputable from the instance alone:

    a1  square market with one common marginal mass (N == L, mu == nu == m)
    a2  every row has a unique strict top-choice column, all distinct
    a3  the runner-up linear cost exceeds the top choice by more than the
        congestion spread ``a[i, t_i] * mu_i^2 * (1 - 1/L)``
    a4  spectral gate: max(eps)*L + max(delta)*N < min(a) (geometric
        convergence of the series solver)
    a5  no capacity penalties (delta == 0) and uniform congestion (a == beta)
    a6  L*eps_i < min(1, beta) for every row
    a7  linear-only costs: delta == 0, a == 0, row-constant c with
        0 < c_i < 2*eps_i*mu_i
    a8  uniform coupling: a == rho, eps == delta == zeta, rho > 2*N*L*zeta > 0
    """

    a1: Flag
    a2: Flag
    a3: Flag
    a4: Flag
    a5: Flag
    a6: Flag
    a7: Flag
    a8: Flag

    def as_dict(self) -> dict:
        return {
            name.upper(): {"ok": flag.ok, "detail": flag.detail}
            for name, flag in self.__dict__.items()
        }


class ValidationResult(NamedTuple):
    ok: bool
    violations: list

    def raise_if_invalid(self):
        if not self.ok:
            raise InvalidInstanceError(self.violations)


class BalanceResult(NamedTuple):
    balanced: bool
    imbalance: float


def _base_of(instance) -> ProblemInstance:
    return instance.base if isinstance(instance, PenalizedInstance) else instance


def validate(instance) -> ValidationResult:
    """Check every structural invariant of an instance.

    Returns a result listing each violated invariant by name; never raises
    and never mutates the input.
    """
    base = _base_of(instance)
    v = []
    n, l = base.n_types, base.n_schools
    if not (isinstance(n, (int, np.integer)) and n > 0):
        v.append(f"n_types must be a positive integer, got {n!r}")
    if not (isinstance(l, (int, np.integer)) and l > 0):
        v.append(f"n_schools must be a positive integer, got {l!r}")
    if v:
        return ValidationResult(False, v)

    for name in ("fixed_cost", "linear_cost", "quad_cost"):
        mat = getattr(base, name)
        if mat.shape != (n, l):
            v.append(f"{name} has shape {mat.shape}, expected {(n, l)}")
        elif not np.all(np.isfinite(mat)):
            v.append(f"{name} contains non-finite entries")
    if base.supply.shape != (n,):
        v.append(f"supply has shape {base.supply.shape}, expected {(n,)}")
    elif not np.all(np.isfinite(base.supply)):
        v.append("supply contains non-finite entries")
    elif np.any(base.supply <= 0):
        v.append("supply entries must be strictly positive")
    if base.capacity.shape != (l,):
        v.append(f"capacity has shape {base.capacity.shape}, expected {(l,)}")
    elif not np.all(np.isfinite(base.capacity)):
        v.append("capacity contains non-finite entries")
    elif np.any(base.capacity <= 0):
        v.append("capacity entries must be strictly positive")
    if base.quad_cost.shape == (n, l) and np.any(base.quad_cost < 0):
        v.append("quad_cost entries must be nonnegative")

    if isinstance(instance, PenalizedInstance):
        if instance.eps.shape != (n,):
            v.append(f"eps has shape {instance.eps.shape}, expected {(n,)}")
        elif np.any(~np.isfinite(instance.eps)) or np.any(instance.eps < 0):
            v.append("eps entries must be finite and nonnegative")
        if instance.delta.shape != (l,):
            v.append(f"delta has shape {instance.delta.shape}, expected {(l,)}")
        elif np.any(~np.isfinite(instance.delta)) or np.any(instance.delta < 0):
            v.append("delta entries must be finite and nonnegative")

    return ValidationResult(not v, v)


def balance_check(instance) -> BalanceResult:
    """Whether total supply equals total capacity, and the signed gap."""
    base = _base_of(instance)
    total_mu, total_nu = base.total_supply, base.total_capacity
    imbalance = total_mu - total_nu
    tol = BALANCE_RTOL * max(abs(total_mu), abs(total_nu))
    return BalanceResult(abs(imbalance) <= tol, imbalance)


def _penalty_weights(instance):
    base = _base_of(instance)
    if isinstance(instance, PenalizedInstance):
        return instance.eps, instance.delta
    return np.zeros(base.n_types), np.zeros(base.n_schools)


def audit_assumptions(instance) -> AssumptionAudit:
    """Evaluate the eight regime gates exactly as stated.

    Accepts a plain :class:`ProblemInstance` as well, in which case the
    penalty weights are treated as zero for a4-a8.
    """
    base = _base_of(instance)
    eps, delta = _penalty_weights(instance)
    n, l = base.n_types, base.n_schools
    c, a = base.linear_cost, base.quad_cost
    mu, nu = base.supply, base.capacity

    marg = np.concatenate([mu, nu])
    a1_ok = n == l and n > 1 and np.ptp(marg) == 0.0
    a1 = Flag(bool(a1_ok), f"N={n}, L={l}, marginal spread {np.ptp(marg):g}")

    tops = np.argmin(c, axis=1)
    strict = all(
        np.all(np.delete(c[i], tops[i]) > c[i, tops[i]]) for i in range(n)
    )
    distinct = len(set(tops.tolist())) == n
    a2 = Flag(
        bool(strict and distinct),
        f"row argmins {tops.tolist()}, strict={strict}, distinct={distinct}",
    )

    if l >= 2:
        gaps = []
        for i in range(n):
            runner_up = np.min(np.delete(c[i], tops[i]))
            bar = c[i, tops[i]] + a[i, tops[i]] * mu[i] ** 2 * (1.0 - 1.0 / l)
            gaps.append(runner_up - bar)
        a3_ok = all(g > 0 for g in gaps)
        a3 = Flag(bool(a3_ok), f"min runner-up margin {min(gaps):g}")
    else:
        a3 = Flag(False, "needs at least two schools")

    lhs = float(eps.max(initial=0.0) * l + delta.max(initial=0.0) * n)
    rhs = float(a.min())
    a4 = Flag(lhs < rhs, f"max(eps)*L + max(delta)*N = {lhs:g} vs min(a) = {rhs:g}")

    uniform_a = np.ptp(a) == 0.0 and a.flat[0] > 0
    a5 = Flag(
        bool(np.all(delta == 0.0) and uniform_a),
        f"delta max {delta.max(initial=0.0):g}, congestion spread {np.ptp(a):g}",
    )

    beta = float(a.min())
    a6_ok = bool(np.all(l * eps < min(1.0, beta)))
    a6 = Flag(a6_ok, f"max L*eps = {l * eps.max(initial=0.0):g} vs min(1, {beta:g})")

    row_const = bool(np.ptp(c, axis=1).max(initial=0.0) == 0.0)
    c_rows = c[:, 0] if c.shape[1] else np.zeros(n)
    a7_ok = (
        bool(np.all(delta == 0.0))
        and bool(np.all(a == 0.0))
        and row_const
        and bool(np.all(c_rows > 0))
        and bool(np.all(c_rows < 2 * eps * mu))
    )
    a7 = Flag(a7_ok, f"row-constant c={row_const}, a zero={bool(np.all(a == 0))}")

    weights = np.concatenate([eps, delta])
    zeta = float(weights[0]) if weights.size else 0.0
    rho = float(a.flat[0])
    a8_ok = (
        np.ptp(a) == 0.0
        and weights.size > 0
        and np.ptp(weights) == 0.0
        and rho > 2 * n * l * zeta > 0
    )
    a8 = Flag(bool(a8_ok), f"rho = {rho:g} vs 2*N*L*zeta = {2 * n * l * zeta:g}")

    return AssumptionAudit(a1, a2, a3, a4, a5, a6, a7, a8)


def evaluate_cost(instance, plan, model: str) -> float:
    """Evaluate a plan under one of the three cost models.

    ``model`` is one of ``"linear"`` (fixed plus linear matching cost),
    ``"congestion"`` (adds the quadratic congestion term), or
    ``"penalized"`` (half the congestion cost plus half the weighted squared
    marginal deviations; requires a :class:`PenalizedInstance`).
    """
    base = _base_of(instance)
    pi = plan.pi if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    if pi.shape != (base.n_types, base.n_schools):
        raise InvalidInstanceError(
            f"plan has shape {pi.shape}, expected {(base.n_types, base.n_schools)}"
        )
    if model == "linear":
        return float(np.sum(base.fixed_cost + base.linear_cost * pi))
    if model == "congestion":
        return float(
            np.sum(base.fixed_cost + base.linear_cost * pi + base.quad_cost * pi**2)
        )
    if model == "penalized":
        if not isinstance(instance, PenalizedInstance):
            raise InvalidInstanceError("penalized cost needs a PenalizedInstance")
        matching = np.sum(
            base.fixed_cost + base.linear_cost * pi + base.quad_cost * pi**2
        )
        under = np.sum(instance.eps * (pi.sum(axis=1) - base.supply) ** 2)
        over = np.sum(instance.delta * (pi.sum(axis=0) - base.capacity) ** 2)
        alpha = PENALTY_TRADE_OFF
        return float(alpha * matching + (1.0 - alpha) * (under + over))
    raise InvalidInstanceError(f"unknown model {model!r}; expected one of {MODELS}")


# ---------------------------------------------------------------------------
# JSON instance schema
#
# {"N": int, "L": int, "d": [[..]], "c": [[..]], "a": [[..]],
#  "mu": [..], "nu": [..], "eps": [..]?, "delta": [..]?}
#
# Matrices are row-major. Missing "eps"/"delta" means a plain instance.
# ---------------------------------------------------------------------------


def instance_from_dict(data: dict):
    """Build an instance from the JSON schema dict."""
    try:
        n, l = int(data["N"]), int(data["L"])
        base = ProblemInstance(
            n_types=n,
            n_schools=l,
            fixed_cost=data["d"],
            linear_cost=data["c"],
            quad_cost=data["a"],
            supply=data["mu"],
            capacity=data["nu"],
        )
    except KeyError as exc:
        raise InvalidInstanceError(f"instance JSON missing field {exc}") from exc
    if "eps" in data or "delta" in data:
        eps = data.get("eps", [0.0] * n)
        delta = data.get("delta", [0.0] * l)
        return PenalizedInstance(base=base, eps=eps, delta=delta)
    return base


def instance_to_dict(instance) -> dict:
    base = _base_of(instance)
    data = {
        "N": int(base.n_types),
        "L": int(base.n_schools),
        "d": base.fixed_cost.tolist(),
        "c": base.linear_cost.tolist(),
        "a": base.quad_cost.tolist(),
        "mu": base.supply.tolist(),
        "nu": base.capacity.tolist(),
    }
    if isinstance(instance, PenalizedInstance):
        data["eps"] = instance.eps.tolist()
        data["delta"] = instance.delta.tolist()
    return data


def load_instance(path):
    """Read an instance from a JSON file following the schema above."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInstanceError(f"malformed instance JSON: {exc}") from exc
    return instance_from_dict(data)


def dump_instance(instance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(instance), fh, indent=2, sort_keys=True)
        fh.write("\n")
