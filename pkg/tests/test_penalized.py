"""Penalized model: assembly, all solve paths, closed forms, and bounds."""

import numpy as np
import pytest

from congested_ot import (
    AssumptionGateError,
    Inapplicable,
    PenalizedInstance,
    ProblemInstance,
    aggregate_mass_closed_form,
    assemble,
    closed_form_inverse,
    closed_form_plan,
    entry_bounds,
    is_positive_definite,
    neumann_solve,
    projected_gradient_reference,
    series_entry_bounds,
    sherman_morrison_inverse,
    solve_direct,
    solve_penalized_qp,
    uniform_coupling_matrix,
)
from congested_ot.oracle import (
    random_contraction_instance,
    random_linear_only_instance,
    random_uniform_congestion_instance,
    random_uniform_weight_instance,
)

from conftest import APPENDIX_C_PLAN


def scalar_instance(a=1.0, eps=0.1, delta=0.1, mu=10.0, nu=10.0, c=0.0):
    base = ProblemInstance(1, 1, [[0.0]], [[c]], [[a]], [mu], [nu])
    return PenalizedInstance(base, [eps], [delta])


class TestAssemble:
    def test_scalar_system(self):
        system = assemble(scalar_instance())
        assert system.a_matrix[0, 0] == pytest.approx(1.2, abs=1e-15)
        assert system.b.tolist() == [2.0]

    def test_appendix_c_first_diagonal(self, appendix_c):
        system = assemble(appendix_c)
        assert system.a_matrix[0, 0] == pytest.approx(
            1.02308 + 0.130457 + 0.196703, abs=1e-12
        )

    def test_zero_weights_degenerate_to_diagonal(self, appendix_c):
        instance = PenalizedInstance(appendix_c.base, np.zeros(3), np.zeros(2))
        system = assemble(instance)
        assert np.array_equal(system.a_matrix, np.diag(appendix_c.base.quad_cost.ravel()))

    def test_parts_reconstruct_exactly(self, appendix_c):
        system = assemble(appendix_c)
        rebuilt = system.diag_part() + system.supply_part() + system.capacity_part()
        assert np.array_equal(rebuilt, system.a_matrix)

    def test_matches_kronecker_oracle(self, appendix_c):
        system = assemble(appendix_c)
        n, l = 3, 2
        oracle = (
            np.diag(appendix_c.base.quad_cost.ravel())
            + np.kron(np.diag(appendix_c.eps), np.ones((l, l)))
            + np.kron(np.ones((n, n)), np.diag(appendix_c.delta))
        )
        assert np.allclose(system.a_matrix, oracle, atol=0)

    def test_symmetry(self, appendix_c):
        system = assemble(appendix_c)
        assert np.array_equal(system.a_matrix, system.a_matrix.T)


class TestPositiveDefinite:
    def test_positive_parameters(self, appendix_c):
        assert is_positive_definite(assemble(appendix_c))

    def test_identity_congestion(self):
        instance = scalar_instance(a=1.0, eps=0.0, delta=0.0)
        assert is_positive_definite(assemble(instance))

    def test_near_singular_warns_but_passes(self):
        instance = scalar_instance(a=1e-12, eps=0.0, delta=0.0)
        with pytest.warns(RuntimeWarning, match="near-singular"):
            assert is_positive_definite(assemble(instance))

    def test_determinant_above_diagonal_product(self, appendix_c):
        system = assemble(appendix_c)
        sign, logdet = np.linalg.slogdet(system.a_matrix)
        assert sign > 0
        assert logdet >= np.sum(np.log(system.quad_diag)) - 1e-12


class TestSolveDirect:
    def test_appendix_c_reproduction(self, appendix_c):
        plan, interior = solve_direct(appendix_c)
        assert interior
        assert np.max(np.abs(plan.pi - APPENDIX_C_PLAN)) <= 1e-3

    def test_scalar_division(self):
        plan, interior = solve_direct(scalar_instance())
        assert interior
        assert plan.pi[0, 0] == pytest.approx(5.0 / 3.0)

    def test_hostile_costs_flag_non_interior(self):
        instance = scalar_instance(c=100.0)  # b = 2 - 50 < 0
        plan, interior = solve_direct(instance)
        assert not interior
        assert plan.pi[0, 0] == 0.0


class TestSolveQp:
    def test_matches_direct_on_interior_instance(self, appendix_c):
        direct_plan, _ = solve_direct(appendix_c)
        qp_plan, cert = solve_penalized_qp(appendix_c)
        assert np.max(np.abs(qp_plan.pi - direct_plan.pi)) <= 1e-8
        assert cert.stationarity_residual <= 1e-7

    def test_nonpositive_pull_gives_zero_plan(self):
        instance = scalar_instance(c=100.0)
        plan, cert = solve_penalized_qp(instance)
        assert plan.pi[0, 0] == 0.0
        assert cert.gamma[0, 0] >= 0.0

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_projected_gradient_oracle(self, seed):
        rng = np.random.default_rng(800 + seed)
        n, l = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        base = ProblemInstance(
            n, l,
            rng.uniform(0, 2, (n, l)),
            rng.uniform(0.5, 6.0, (n, l)),
            rng.uniform(0.4, 3.0, (n, l)),
            rng.uniform(1, 8, n),
            rng.uniform(1, 8, l),
        )
        instance = PenalizedInstance(base, rng.uniform(0.05, 1, n), rng.uniform(0.05, 1, l))
        qp_plan, _ = solve_penalized_qp(instance, tol=1e-10)
        reference = projected_gradient_reference(instance, tol=1e-9)
        assert np.max(np.abs(qp_plan.pi - reference.pi)) <= 1e-6

    def test_complementarity_certificate(self):
        instance = scalar_instance(c=3.0)  # b = 2 - 1.5 > 0, interior
        plan, cert = solve_penalized_qp(instance)
        assert cert.complementarity_residual <= 1e-9


class TestNeumann:
    def test_appendix_b_matches_direct(self, appendix_b):
        direct_plan, _ = solve_direct(appendix_b)
        plan, trace = neumann_solve(appendix_b, eps_target=1e-8)
        assert np.max(np.abs(plan.pi - direct_plan.pi)) <= 1e-8
        assert trace.first_below_target is not None

    def test_zero_coupling_converges_immediately(self, appendix_c):
        instance = PenalizedInstance(appendix_c.base, np.zeros(3), np.zeros(2))
        plan, trace = neumann_solve(instance, eps_target=1e-10)
        system = assemble(instance)
        assert trace.n_terms == 0
        assert trace.spectral_norm == 0.0
        expected = (system.b / system.quad_diag).reshape(3, 2)
        assert np.array_equal(plan.pi, expected)

    def test_gate_violation_refused_naming_a4(self):
        base = ProblemInstance(
            2, 2, np.zeros((2, 2)), np.ones((2, 2)), np.ones((2, 2)),
            [1.0, 1.0], [1.0, 1.0],
        )
        instance = PenalizedInstance(base, [1.0, 1.0], [1.0, 1.0])
        with pytest.raises(AssumptionGateError) as excinfo:
            neumann_solve(instance, eps_target=1e-6)
        assert excinfo.value.assumption == "A4"

    def test_bounds_monotone_and_valid(self, appendix_c):
        plan, trace = neumann_solve(appendix_c, eps_target=1e-9)
        assert np.all(np.diff(trace.error_bounds) <= 1e-15)
        assert np.all(trace.measured_errors <= trace.error_bounds + 1e-15)

    def test_term_count_sufficient(self, appendix_c):
        for target in (1e-4, 1e-6, 1e-8):
            _, trace = neumann_solve(appendix_c, eps_target=target)
            assert trace.measured_errors[-1] < target


class TestShermanMorrison:
    def test_appendix_c_identity_residual(self, appendix_c):
        ainv = sherman_morrison_inverse(appendix_c)
        system = assemble(appendix_c)
        residual = np.abs(ainv @ system.a_matrix - np.eye(6)).max()
        assert residual <= 1e-8

    def test_zero_weights_zero_updates(self, appendix_c):
        instance = PenalizedInstance(appendix_c.base, np.zeros(3), np.zeros(2))
        ainv = sherman_morrison_inverse(instance)
        assert np.array_equal(ainv, np.diag(1.0 / appendix_c.base.quad_cost.ravel()))

    def test_matches_closed_form(self, appendix_b):
        via_updates = sherman_morrison_inverse(appendix_b)
        closed = closed_form_inverse(appendix_b)
        assert np.max(np.abs(via_updates - closed)) <= 1e-10


class TestClosedFormInverse:
    def test_block_values_from_scalar_formula(self):
        eps1 = 0.107014
        base = ProblemInstance(
            1, 2, np.zeros((1, 2)), np.ones((1, 2)), np.full((1, 2), 2.0),
            [10.0], [5.0, 5.0],
        )
        instance = PenalizedInstance(base, [eps1], [0.0, 0.0])
        ainv = closed_form_inverse(instance)
        diag = 0.5 - 0.5 * (eps1 / (2.0 + 2.0 * eps1))
        off = -0.5 * (eps1 / (2.0 + 2.0 * eps1))
        assert ainv[0, 0] == pytest.approx(diag, abs=1e-12)
        assert ainv[0, 1] == pytest.approx(off, abs=1e-12)

    def test_zero_weights_scaled_identity(self, appendix_b):
        instance = PenalizedInstance(appendix_b.base, np.zeros(3), np.zeros(2))
        ainv = closed_form_inverse(instance)
        assert np.allclose(ainv, np.eye(6) / 2.0, atol=0)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_dense_inverse(self, seed):
        rng = np.random.default_rng(900 + seed)
        n, l = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        instance = random_uniform_congestion_instance(rng, n, l)
        ainv = closed_form_inverse(instance)
        dense = np.linalg.inv(assemble(instance).a_matrix)
        assert np.max(np.abs(ainv - dense)) <= 1e-10

    def test_gate_failure_inapplicable(self, appendix_c):
        result = closed_form_inverse(appendix_c)
        assert isinstance(result, Inapplicable)
        assert "a5" in result.gates


class TestClosedFormPlan:
    def test_matches_direct(self, appendix_b):
        plan = closed_form_plan(appendix_b)
        direct_plan, _ = solve_direct(appendix_b)
        assert np.max(np.abs(plan.pi - direct_plan.pi)) <= 1e-10

    def test_zero_weights_decouple(self, appendix_b):
        instance = PenalizedInstance(appendix_b.base, np.zeros(3), np.zeros(2))
        result = closed_form_plan(instance)
        system = assemble(instance)
        if isinstance(result, Inapplicable):
            # b has nonpositive entries; positivity proviso correctly trips.
            assert np.min(system.b) <= 0
        else:
            assert np.allclose(result.pi.ravel(), system.b / 2.0, atol=0)

    def test_negative_pull_inapplicable(self):
        base = ProblemInstance(
            1, 2, np.zeros((1, 2)), [[50.0, 0.1]], np.full((1, 2), 2.0),
            [10.0], [5.0, 5.0],
        )
        instance = PenalizedInstance(base, [0.1], [0.0, 0.0])
        result = closed_form_plan(instance)
        assert isinstance(result, Inapplicable)
        assert "positivity" in result.gates


class TestAggregateMass:
    def test_hand_value(self):
        base = ProblemInstance(
            1, 2, np.zeros((1, 2)), np.full((1, 2), 2.0), np.zeros((1, 2)),
            [10.0], [5.0, 5.0],
        )
        instance = PenalizedInstance(base, [1.0], [0.0, 0.0])
        assert aggregate_mass_closed_form(instance).tolist() == [9.0]

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_scalar_vertex_oracle(self, seed):
        rng = np.random.default_rng(1000 + seed)
        n, l = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        instance = random_linear_only_instance(rng, n, l)
        x = aggregate_mass_closed_form(instance)
        mu = instance.base.supply
        c_rows = instance.base.linear_cost[:, 0]
        # Independent route: vertex of the per-row parabola
        # eps*x^2 + (c - 2*eps*mu)*x + const.
        vertex = -(c_rows - 2 * instance.eps * mu) / (2 * instance.eps)
        assert np.allclose(x, vertex, rtol=1e-12, atol=0)
        assert np.all(x > 0) and np.all(x < mu)

    def test_gate_failure_raises(self, appendix_c):
        with pytest.raises(AssumptionGateError) as excinfo:
            aggregate_mass_closed_form(appendix_c)
        assert excinfo.value.assumption == "A7"

    def test_boundary_zero_cost_excluded(self):
        # At c -> 0 the formula limit is x = mu, but the gate requires a
        # strictly positive linear cost, so the boundary itself is refused.
        base = ProblemInstance(
            1, 2, np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)),
            [10.0], [5.0, 5.0],
        )
        instance = PenalizedInstance(base, [1.0], [0.0, 0.0])
        with pytest.raises(AssumptionGateError):
            aggregate_mass_closed_form(instance)


class TestCouplingMatrix:
    def test_row_sums(self):
        y = uniform_coupling_matrix(2, 2)
        assert np.array_equal(y.sum(axis=1), np.full(4, 4))

    def test_power_bounds_small(self):
        for n in (1, 2, 3):
            for l in (1, 2, 3):
                m = n * l
                y = uniform_coupling_matrix(n, l).astype(object)
                power = np.eye(m, dtype=object)
                for k in range(1, 7):
                    power = power @ y
                    assert int(power.max()) * m <= (2 * m) ** k
                    if k >= 2:
                        assert int(power.min()) * m >= m ** (k // 2)

    def test_square_market_assembly_consistency(self):
        rng = np.random.default_rng(5)
        instance = random_uniform_weight_instance(rng, 3, 3)
        zeta = float(instance.eps[0])
        rho = float(instance.base.quad_cost.flat[0])
        y = uniform_coupling_matrix(3, 3)
        assert np.array_equal(
            rho * np.eye(9) + zeta * y, assemble(instance).a_matrix
        )

    def test_rectangular_market_consistency_up_to_cell_order(self):
        rng = np.random.default_rng(6)
        instance = random_uniform_weight_instance(rng, 2, 3)
        zeta = float(instance.eps[0])
        rho = float(instance.base.quad_cost.flat[0])
        y = uniform_coupling_matrix(2, 3)
        n, l = 2, 3
        # Permutation from row-major (cells grouped by type) to the
        # school-grouped order the coupling pattern uses.
        perm = np.argsort([j * n + i for i in range(n) for j in range(l)])
        a_matrix = assemble(instance).a_matrix
        reordered = a_matrix[np.ix_(perm, perm)]
        assert np.array_equal(rho * np.eye(6) + zeta * y, reordered)


class TestEntryBounds:
    def test_containment_on_reference_instance(self):
        base = ProblemInstance(
            2, 2, np.zeros((2, 2)), np.ones((2, 2)), np.full((2, 2), 100.0),
            [5.0, 5.0], [5.0, 5.0],
        )
        instance = PenalizedInstance(base, [1.0, 1.0], [1.0, 1.0])
        bounds = entry_bounds(instance)
        dense = np.linalg.inv(assemble(instance).a_matrix)
        assert bounds.c1 <= dense.min()
        assert dense.max() <= bounds.c2
        plan, _ = solve_direct(instance)
        assert np.max(np.abs(plan.pi)) <= bounds.plan_bound

    def test_zero_coupling_limit(self):
        c1, c2 = series_entry_bounds(2, 2, 1e-12, 100.0)
        base_c1, base_c2 = series_entry_bounds(2, 2, 1e-3, 100.0)
        assert abs(c1) < abs(base_c1) and c1 < 0
        assert abs(c2 - 1.0 / 100.0) < abs(base_c2 - 1.0 / 100.0)

    def test_order_between_bounds(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            instance = random_uniform_weight_instance(
                rng, int(rng.integers(1, 4)), int(rng.integers(1, 4))
            )
            bounds = entry_bounds(instance)
            assert bounds.c1 <= bounds.c2

    def test_gate_failure_raises(self, appendix_c):
        with pytest.raises(AssumptionGateError) as excinfo:
            entry_bounds(appendix_c)
        assert excinfo.value.assumption == "A8"


class TestPathEquivalence:
    @pytest.mark.parametrize("seed", range(10))
    def test_all_interior_paths_agree(self, seed):
        rng = np.random.default_rng(1100 + seed)
        n, l = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        instance = random_contraction_instance(rng, n, l, interior=True)
        system = assemble(instance)
        direct_plan, interior = solve_direct(instance)
        assert interior
        qp_plan, _ = solve_penalized_qp(instance)
        neumann_plan, _ = neumann_solve(instance, eps_target=1e-10)
        smw_plan = (sherman_morrison_inverse(instance) @ system.b).reshape(n, l)
        for other in (qp_plan.pi, neumann_plan.pi, smw_plan):
            assert np.max(np.abs(direct_plan.pi - other)) <= 1e-7
