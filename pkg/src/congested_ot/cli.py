"""Command-line interface.

One binary, subcommand style::

    congested-ot solve INPUT.json --model penalized --method direct
    congested-ot analyze INPUT.json --singular-system
    congested-ot inverse INPUT.json --method smw
    congested-ot bounds INPUT.json
    congested-ot sensitivity INPUT.json --order exact
    congested-ot check-assumptions INPUT.json
    congested-ot oracle INPUT.json --enumerate
    congested-ot bench

Exit codes: 0 success, 1 invalid input or configuration, 2 solver
non-convergence, 3 gate refusal (a named assumption or interiority
precondition).  Reports are JSON with sorted keys; ``--format csv`` emits
the plan (or matrix) as bare CSV rows.  ``--no-timing`` drops wall-clock
fields so identical runs produce byte-identical reports.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bench as bench_mod
from . import kernels
from .congestion import (
    build_bordered_hessian,
    build_singular_system,
    solve_congestion,
)
from .errors import (
    AssumptionGateError,
    CongestedOTError,
    ConvergenceError,
    InteriorityError,
    InvalidInstanceError,
)
from .instances import (
    Inapplicable,
    PenalizedInstance,
    TransportPlan,
    audit_assumptions,
    evaluate_cost,
    load_instance,
    validate,
)
from .linear import solve_linear
from .oracle import enumerate_integer_plans, projected_gradient_reference
from .penalized import (
    assemble,
    closed_form_inverse,
    closed_form_plan,
    entry_bounds,
    neumann_solve,
    sherman_morrison_inverse,
    solve_direct,
    solve_penalized_qp,
)
from .sensitivity import (
    finite_difference_check,
    sensitivity_exact,
    sensitivity_truncated,
    sign_table_verdict,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NO_CONVERGENCE = 2
EXIT_GATE_REFUSED = 3

_PENALIZED_METHODS = ("direct", "neumann", "smw", "closed-form", "qp")


@dataclass
class RunConfig:
    """Validated options for one solve run."""

    inputs: list
    model: str = "linear"
    method: str | None = None
    tol: float = 1e-9
    eps_target: float = 1e-8
    max_iter: int | None = None
    output_format: str = "json"
    with_bounds: bool = False
    sensitivity_order: str | None = None
    fd_check: tuple | None = None  # (kind, row, col, step)
    no_timing: bool = False
    jobs: int = 1
    verbose: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in ("linear", "congestion", "penalized"):
            raise InvalidInstanceError(f"unknown model {self.model!r}")
        if self.model == "penalized":
            if self.method is None:
                self.method = "direct"
            if self.method not in _PENALIZED_METHODS:
                raise InvalidInstanceError(
                    f"method {self.method!r} is not valid for the penalized model; "
                    f"choose one of {_PENALIZED_METHODS}"
                )
        elif self.method is not None:
            raise InvalidInstanceError(
                f"--method applies to the penalized model only, got model "
                f"{self.model!r} with method {self.method!r}"
            )
        if self.output_format not in ("json", "csv"):
            raise InvalidInstanceError(f"unknown format {self.output_format!r}")
        if self.jobs < 1:
            raise InvalidInstanceError("--jobs must be at least 1")


def _matrix_csv(matrix) -> str:
    return "\n".join(",".join(repr(float(x)) for x in row) for row in np.asarray(matrix))


def _plan_payload(plan):
    return {
        "objective": plan.objective,
        "plan": plan.pi.tolist(),
        "row_sums": plan.row_sums.tolist(),
        "col_sums": plan.col_sums.tolist(),
    }


def _certificate_payload(cert):
    return {
        "xi": cert.xi.tolist(),
        "lambda": cert.lam.tolist(),
        "gamma": cert.gamma.tolist(),
        "stationarity_residual": cert.stationarity_residual,
        "complementarity_residual": cert.complementarity_residual,
        "iterations": cert.iterations,
    }


def _require_penalized(instance, what: str) -> PenalizedInstance:
    if not isinstance(instance, PenalizedInstance):
        raise InvalidInstanceError(
            f"{what} needs a penalized instance (JSON with eps/delta)"
        )
    return instance


def _parse_fd_coordinate(coord: str, step: str):
    try:
        kind, rest = coord.split(":", 1)
        row, col = (int(part) for part in rest.split(","))
        return kind, row, col, float(step)
    except (ValueError, AttributeError) as exc:
        raise InvalidInstanceError(
            f"--fd-check wants KIND:ROW,COL and a step, e.g. 'c:0,1 1e-5'; got "
            f"{coord!r} {step!r}"
        ) from exc


def report_bundle(config: RunConfig, input_path: str) -> dict:
    """Solve one input per the config and assemble the structured report."""
    started = time.perf_counter()
    instance = load_instance(input_path)
    validate(instance).raise_if_invalid()
    audit = audit_assumptions(instance)
    report = {
        "input": str(input_path),
        "model": config.model,
        "method": config.method,
        "audit": audit.as_dict(),
        "backend": kernels.backend(),
    }

    if config.model == "linear":
        plan, basis = solve_linear(_strip(instance))
        report["method"] = "transportation-simplex"
        report.update(_plan_payload(plan))
        report["duals"] = {"u": basis.u.tolist(), "v": basis.v.tolist()}
        report["basis_size"] = len(basis.cells)
        report["positive_cells"] = len(plan.support())
    elif config.model == "congestion":
        plan, cert = solve_congestion(
            _strip(instance), tol=config.tol, max_iter=config.max_iter
        )
        report["method"] = "active-set-qp"
        report.update(_plan_payload(plan))
        report["certificate"] = _certificate_payload(cert)
    else:
        instance = _require_penalized(instance, "the penalized model")
        plan = None
        if config.method == "direct":
            plan, interior = solve_direct(instance, tol=config.tol)
            report["interior"] = interior
            if not interior:
                report["method"] = "qp"  # the factorization route handed off
        elif config.method == "qp":
            plan, cert = solve_penalized_qp(
                instance, tol=config.tol, max_iter=config.max_iter
            )
            report["certificate"] = _certificate_payload(cert)
        elif config.method == "neumann":
            plan, trace = neumann_solve(instance, eps_target=config.eps_target)
            report["series"] = {
                "terms": trace.n_terms,
                "spectral_norm": trace.spectral_norm,
                "gate_margin": trace.gate_margin,
                "gate_ok": trace.gate_ok,
                "first_below_target": trace.first_below_target,
                "final_bound": float(trace.error_bounds[-1]),
                "final_measured_error": float(trace.measured_errors[-1]),
            }
        elif config.method == "smw":
            ainv = sherman_morrison_inverse(instance)
            system = assemble(instance)
            candidate = ainv @ system.b
            if np.all(candidate > 0):
                pi = candidate.reshape(instance.n_types, instance.n_schools)
                plan = TransportPlan(
                    pi=pi, objective=evaluate_cost(instance, pi, "penalized")
                )
                report["interior"] = True
            else:
                plan, _ = solve_penalized_qp(instance, tol=config.tol)
                report["interior"] = False
                report["method"] = "qp"  # the inverse route handed off
        elif config.method == "closed-form":
            result = closed_form_plan(instance)
            if isinstance(result, Inapplicable):
                raise AssumptionGateError(
                    "/".join(g.upper() for g in result.gates) or "A5/A6",
                    result.reason,
                )
            plan = result
        report.update(_plan_payload(plan))

        if config.with_bounds:
            report["bounds"] = _bounds_payload(instance)
        if config.sensitivity_order is not None:
            report["sensitivity"] = _sensitivity_payload(
                instance, plan, config.sensitivity_order, config.fd_check
            )

    if not config.no_timing:
        report["timing"] = {"seconds": time.perf_counter() - started}
    return report


def _strip(instance):
    return instance.base if isinstance(instance, PenalizedInstance) else instance


def _bounds_payload(instance: PenalizedInstance) -> dict:
    bounds = entry_bounds(instance)
    system = assemble(instance)
    dense_inverse = np.linalg.inv(system.a_matrix)
    plan, _ = solve_direct(instance)
    return {
        "c1": bounds.c1,
        "c2": bounds.c2,
        "plan_bound": bounds.plan_bound,
        "inverse_min_above_c1": bool(dense_inverse.min() >= bounds.c1),
        "inverse_max_below_c2": bool(dense_inverse.max() <= bounds.c2),
        "plan_within_bound": bool(np.max(np.abs(plan.pi)) <= bounds.plan_bound),
    }


def _sensitivity_payload(instance, plan, order: str, fd_check) -> dict:
    if order == "exact":
        matrix = sensitivity_exact(instance, plan)
    else:
        matrix = sensitivity_truncated(instance, plan, order=int(order))
    system = assemble(instance)
    payload = {
        "order": matrix.order,
        "dpi_dc": matrix.dpi_dc.tolist(),
        "dpi_da": matrix.dpi_da.tolist(),
        "residual_c": float(
            np.max(np.abs(system.a_matrix @ matrix.dpi_dc + np.eye(system.n_cells)))
        ),
        "residual_a": float(
            np.max(
                np.abs(
                    system.a_matrix @ matrix.dpi_da
                    + 2.0 * np.diag(plan.pi.ravel())
                )
            )
        ),
    }
    # The substitution sign table is a property of the first-order
    # truncation; evaluate the verdict on that basis for every order.
    table_basis = (
        matrix if order != "exact" else sensitivity_truncated(instance, plan, order=1)
    )
    payload["sign_table"] = sign_table_verdict(instance, table_basis)
    payload["sign_table"]["basis"] = table_basis.order
    if fd_check is not None:
        kind, row, col, step = fd_check
        fd = finite_difference_check(instance, kind, row, col, step)
        response_c, response_a = matrix.plan_response()
        block = response_c if kind == "c" else response_a
        column = block[:, row * instance.n_schools + col].reshape(fd.shape)
        payload["fd_check"] = {
            "coordinate": f"{kind}:{row},{col}",
            "step": step,
            "estimate": fd.tolist(),
            "max_abs_deviation": float(np.max(np.abs(fd - column))),
        }
    return payload


def _cmd_solve(args) -> int:
    fd_check = None
    if args.fd_check is not None:
        fd_check = _parse_fd_coordinate(*args.fd_check)
    config = RunConfig(
        inputs=args.inputs,
        model=args.model,
        method=args.method,
        tol=args.tol,
        eps_target=args.eps_target,
        max_iter=args.max_iter,
        output_format=args.format,
        with_bounds=args.bounds,
        sensitivity_order=args.sensitivity,
        fd_check=fd_check,
        no_timing=args.no_timing,
        jobs=args.jobs,
        verbose=args.verbose,
    )

    def run_one(path):
        return report_bundle(config, path)

    if config.jobs > 1 and len(config.inputs) > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            reports = list(pool.map(run_one, config.inputs))
    else:
        reports = [run_one(path) for path in config.inputs]

    if config.output_format == "csv":
        chunks = [_matrix_csv(report["plan"]) for report in reports]
        print("\n\n".join(chunks))
    else:
        payload = reports[0] if len(reports) == 1 else reports
        print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def _cmd_analyze(args) -> int:
    instance = _strip(load_instance(args.input))
    validate(instance).raise_if_invalid()
    payload = {}
    if args.singular_system or not args.bordered_hessian:
        system = build_singular_system(instance)
        matrix = system.matrix
        scale = float(np.max(np.abs(matrix)))
        payload["singular_system"] = {
            "matrix": matrix.tolist(),
            "rhs": system.rhs.tolist(),
            "determinant": float(np.linalg.det(matrix)),
            "scaled_determinant_tolerance": 1e-8 * max(scale, 1.0) ** matrix.shape[0],
            "row_dependency_residual": system.row_dependency_residual(),
        }
    if args.bordered_hessian:
        hessian = build_bordered_hessian(instance)
        payload["bordered_hessian"] = {
            "matrix": hessian.matrix.tolist(),
            "determinant": float(np.linalg.det(hessian.matrix)),
            "row_dependency_residual": hessian.row_dependency_residual(),
        }
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def _cmd_inverse(args) -> int:
    instance = _require_penalized(load_instance(args.input), "inverse")
    validate(instance).raise_if_invalid()
    if args.method == "smw":
        matrix = sherman_morrison_inverse(instance)
    elif args.method == "dense":
        matrix = np.linalg.inv(assemble(instance).a_matrix)
    else:
        result = closed_form_inverse(instance)
        if isinstance(result, Inapplicable):
            raise AssumptionGateError(
                "/".join(g.upper() for g in result.gates) or "A5/A6", result.reason
            )
        matrix = result
    print(_matrix_csv(matrix))
    return EXIT_OK


def _cmd_bounds(args) -> int:
    instance = _require_penalized(load_instance(args.input), "bounds")
    bounds = entry_bounds(instance)
    print(
        json.dumps(
            {"c1": bounds.c1, "c2": bounds.c2, "plan_bound": bounds.plan_bound},
            sort_keys=True,
        )
    )
    return EXIT_OK


def _cmd_sensitivity(args) -> int:
    instance = _require_penalized(load_instance(args.input), "sensitivity")
    plan, interior = solve_direct(instance)
    if not interior:
        raise InteriorityError("sensitivity needs an interior optimum")
    fd_check = None
    if args.fd_check is not None:
        fd_check = _parse_fd_coordinate(*args.fd_check)
    payload = _sensitivity_payload(instance, plan, args.order, fd_check)
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def _cmd_check_assumptions(args) -> int:
    instance = load_instance(args.input)
    validate(instance).raise_if_invalid()
    print(json.dumps(audit_assumptions(instance).as_dict(), sort_keys=True))
    return EXIT_OK


def _cmd_oracle(args) -> int:
    instance = load_instance(args.input)
    if args.pgd:
        plan = projected_gradient_reference(
            _require_penalized(instance, "the projected-gradient oracle"),
            tol=args.tol,
        )
        print(json.dumps(_plan_payload(plan), sort_keys=True))
        return EXIT_OK
    result = enumerate_integer_plans(instance, model=args.enum_model)
    payload = {
        "count": result.count,
        "best_objective": result.best_objective,
        "best_plan": None if result.best_plan is None else result.best_plan.tolist(),
    }
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def _cmd_bench(args) -> int:
    report = bench_mod.run_benchmark(sides=tuple(args.sizes), repeats=args.repeats)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="congested-ot",
        description="Solvers for discrete matching with congestion costs "
        "and penalized marginals",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve an instance under one model")
    solve.add_argument("inputs", nargs="+", help="instance JSON file(s)")
    solve.add_argument(
        "--model", choices=("linear", "congestion", "penalized"), default="linear"
    )
    solve.add_argument("--method", choices=_PENALIZED_METHODS, default=None)
    solve.add_argument("--tol", type=float, default=1e-9)
    solve.add_argument("--eps-target", type=float, default=1e-8)
    solve.add_argument("--max-iter", type=int, default=None)
    solve.add_argument("--format", choices=("json", "csv"), default="json")
    solve.add_argument("--bounds", action="store_true")
    solve.add_argument("--sensitivity", choices=("exact", "0", "1"), default=None)
    solve.add_argument("--fd-check", nargs=2, metavar=("COORD", "STEP"), default=None)
    solve.add_argument("--no-timing", action="store_true")
    solve.add_argument("--jobs", type=int, default=1)
    solve.set_defaults(handler=_cmd_solve)

    analyze = sub.add_parser("analyze", help="dump structural systems as JSON")
    analyze.add_argument("input")
    analyze.add_argument("--singular-system", action="store_true")
    analyze.add_argument("--bordered-hessian", action="store_true")
    analyze.set_defaults(handler=_cmd_analyze)

    inverse = sub.add_parser("inverse", help="emit the system inverse as CSV")
    inverse.add_argument("input")
    inverse.add_argument(
        "--method", choices=("smw", "closed-form", "dense"), default="smw"
    )
    inverse.set_defaults(handler=_cmd_inverse)

    bounds = sub.add_parser("bounds", help="entry bounds for uniform weights")
    bounds.add_argument("input")
    bounds.set_defaults(handler=_cmd_bounds)

    sens = sub.add_parser("sensitivity", help="comparative statics blocks")
    sens.add_argument("input")
    sens.add_argument("--order", choices=("exact", "0", "1"), default="exact")
    sens.add_argument("--fd-check", nargs=2, metavar=("COORD", "STEP"), default=None)
    sens.set_defaults(handler=_cmd_sensitivity)

    check = sub.add_parser("check-assumptions", help="audit the regime gates")
    check.add_argument("input")
    check.set_defaults(handler=_cmd_check_assumptions)

    oracle = sub.add_parser("oracle", help="brute-force references")
    oracle.add_argument("input")
    group = oracle.add_mutually_exclusive_group(required=True)
    group.add_argument("--enumerate", action="store_true")
    group.add_argument("--pgd", action="store_true")
    oracle.add_argument(
        "--enum-model",
        choices=("linear", "congestion", "penalized"),
        default="linear",
    )
    oracle.add_argument("--tol", type=float, default=1e-8)
    oracle.set_defaults(handler=_cmd_oracle)

    bench = sub.add_parser("bench", help="kernel scaling and backend comparison")
    bench.add_argument(
        "--sizes", type=int, nargs="+", default=list(bench_mod.DEFAULT_SIDES)
    )
    bench.add_argument("--repeats", type=int, default=5)
    bench.set_defaults(handler=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(
            level=logging.DEBUG if args.verbose > 1 else logging.INFO
        )
    try:
        return args.handler(args)
    except (AssumptionGateError, InteriorityError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_GATE_REFUSED
    except ConvergenceError as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (InvalidInstanceError, FileNotFoundError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CongestedOTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
