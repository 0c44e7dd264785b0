"""Discrete matching with congestion costs and penalized marginals.

Three related models over N types and L schools: the classical linear
transport problem, a quadratic-congestion variant with hard marginal
constraints, and a penalized variant that trades marginal fulfillment
against matching cost.  Solvers are deterministic and validated against
independent brute-force oracles; see the CLI (``congested-ot``) for the
file-based workflow.
"""

from .bench import run_benchmark
from .congestion import (
    BorderedHessian,
    SingularSystem,
    build_bordered_hessian,
    build_singular_system,
    envelope_gradients,
    solve_congestion,
    top_choice_plan,
)
from .errors import (
    AssumptionGateError,
    CongestedOTError,
    ConvergenceError,
    CyclingGuardError,
    InteriorityError,
    InvalidInstanceError,
    SizeCapError,
    UnbalancedInstanceError,
)
from .instances import (
    AssumptionAudit,
    BalanceResult,
    Flag,
    Inapplicable,
    KKTCertificate,
    PenalizedInstance,
    ProblemInstance,
    TransportPlan,
    ValidationResult,
    audit_assumptions,
    balance_check,
    dump_instance,
    evaluate_cost,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    validate,
)
from .kernels import backend
from .linear import BasisState, count_upper_bound, solve_linear
from .oracle import (
    EnumerationResult,
    enumerate_integer_plans,
    finite_difference_gradient,
    projected_gradient_reference,
)
from .penalized import (
    EntryBounds,
    NeumannTrace,
    PenalizedSystem,
    aggregate_mass_closed_form,
    assemble,
    closed_form_inverse,
    closed_form_plan,
    entry_bounds,
    is_positive_definite,
    neumann_solve,
    series_entry_bounds,
    sherman_morrison_inverse,
    solve_direct,
    solve_penalized_qp,
    uniform_coupling_matrix,
)
from .sensitivity import (
    SensitivityMatrix,
    finite_difference_check,
    marginal_response_order0,
    sensitivity_exact,
    sensitivity_truncated,
    sign_table_verdict,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionAudit",
    "AssumptionGateError",
    "BalanceResult",
    "BasisState",
    "BorderedHessian",
    "CongestedOTError",
    "ConvergenceError",
    "CyclingGuardError",
    "EntryBounds",
    "EnumerationResult",
    "Flag",
    "Inapplicable",
    "InteriorityError",
    "InvalidInstanceError",
    "KKTCertificate",
    "NeumannTrace",
    "PenalizedInstance",
    "PenalizedSystem",
    "ProblemInstance",
    "SensitivityMatrix",
    "SingularSystem",
    "SizeCapError",
    "TransportPlan",
    "UnbalancedInstanceError",
    "ValidationResult",
    "aggregate_mass_closed_form",
    "assemble",
    "audit_assumptions",
    "backend",
    "balance_check",
    "build_bordered_hessian",
    "build_singular_system",
    "closed_form_inverse",
    "closed_form_plan",
    "count_upper_bound",
    "dump_instance",
    "entry_bounds",
    "enumerate_integer_plans",
    "envelope_gradients",
    "evaluate_cost",
    "finite_difference_check",
    "finite_difference_gradient",
    "instance_from_dict",
    "instance_to_dict",
    "is_positive_definite",
    "load_instance",
    "marginal_response_order0",
    "neumann_solve",
    "projected_gradient_reference",
    "run_benchmark",
    "sensitivity_exact",
    "sensitivity_truncated",
    "series_entry_bounds",
    "sherman_morrison_inverse",
    "sign_table_verdict",
    "solve_congestion",
    "solve_direct",
    "solve_linear",
    "solve_penalized_qp",
    "top_choice_plan",
    "uniform_coupling_matrix",
    "validate",
]
