"""Congestion model: QP solves, singular structures, envelope gradients."""

import numpy as np
import pytest

from congested_ot import (
    Inapplicable,
    InteriorityError,
    InvalidInstanceError,
    ProblemInstance,
    build_bordered_hessian,
    build_singular_system,
    enumerate_integer_plans,
    envelope_gradients,
    solve_congestion,
    top_choice_plan,
)
from congested_ot.oracle import random_balanced_instance


def test_interior_fixture_plan(example_3_1):
    plan, cert = solve_congestion(example_3_1)
    assert np.allclose(plan.pi, [[4.0, 6.0], [2.0, 8.0]], atol=1e-7)
    assert cert.stationarity_residual <= 1e-9
    # Interior: every bound multiplier vanishes.
    assert np.max(cert.gamma) <= 1e-9


def test_corner_fixture_plan(example_3_2):
    plan, cert = solve_congestion(example_3_2)
    assert np.allclose(plan.pi, [[0.0, 5.0], [5.0, 0.0]], atol=1e-7)
    assert cert.gamma[0, 0] > 0 and cert.gamma[1, 1] > 0
    assert cert.complementarity_residual <= 1e-9


def test_quadratic_fixture_concentrates(appendix_a_quadratic):
    plan, _ = solve_congestion(appendix_a_quadratic)
    expected = np.zeros((4, 4))
    for i, j in [(0, 1), (1, 3), (2, 0), (3, 2)]:
        expected[i, j] = 20.0
    assert np.allclose(plan.pi, expected, atol=1e-7)


def test_stationarity_identity(example_3_1):
    plan, cert = solve_congestion(example_3_1)
    instance = example_3_1
    gradient = 2.0 * instance.quad_cost * plan.pi + instance.linear_cost
    implied = cert.xi[:, None] + cert.lam[None, :]
    interior = plan.pi > 1e-9
    assert np.max(np.abs(gradient - implied)[interior]) <= 1e-8


@pytest.mark.parametrize("seed", range(8))
def test_uniqueness_across_starts(seed):
    rng = np.random.default_rng(300 + seed)
    instance = random_balanced_instance(rng, 3, 4)
    plan_a, _ = solve_congestion(instance, start="linear")
    plan_b, _ = solve_congestion(instance, start="northwest")
    assert np.max(np.abs(plan_a.pi - plan_b.pi)) <= 1e-7


@pytest.mark.parametrize("seed", range(8))
def test_feasibility_and_nonnegativity(seed):
    rng = np.random.default_rng(400 + seed)
    instance = random_balanced_instance(rng, 4, 3)
    plan, _ = solve_congestion(instance)
    assert np.allclose(plan.row_sums, instance.supply, atol=1e-8)
    assert np.allclose(plan.col_sums, instance.capacity, atol=1e-8)
    assert plan.pi.min() >= -1e-10


@pytest.mark.parametrize("seed", range(5))
def test_relaxation_lower_bounds_integer_optimum(seed):
    rng = np.random.default_rng(500 + seed)
    instance = random_balanced_instance(rng, 2, 3, integral=True, total_mass=8)
    plan, _ = solve_congestion(instance)
    oracle = enumerate_integer_plans(instance, model="congestion")
    assert plan.objective <= oracle.best_objective + 1e-8


def test_objective_monotone_in_costs(example_3_1):
    base_plan, _ = solve_congestion(example_3_1)
    for field in ("linear_cost", "quad_cost"):
        for i in range(2):
            for j in range(2):
                matrix = getattr(example_3_1, field).copy()
                matrix[i, j] += 0.5
                import dataclasses

                bumped = dataclasses.replace(example_3_1, **{field: matrix})
                plan, _ = solve_congestion(bumped)
                assert plan.objective >= base_plan.objective - 1e-9


def test_zero_quad_cost_routed_away():
    instance = ProblemInstance(
        2, 2, np.zeros((2, 2)), np.ones((2, 2)), np.zeros((2, 2)),
        [1.0, 1.0], [1.0, 1.0],
    )
    with pytest.raises(InvalidInstanceError, match="linear solver"):
        solve_congestion(instance)


class TestSingularSystem:
    def test_uniform_quad_cost_parts(self):
        instance = ProblemInstance(
            2, 2, np.zeros((2, 2)), np.ones((2, 2)), np.ones((2, 2)),
            [1.0, 1.0], [1.0, 1.0],
        )
        system = build_singular_system(instance)
        assert np.allclose(system.diag, [1.0, 1.0, 1.0, 1.0])
        assert np.allclose(system.coupling, 0.5)

    def test_interior_fixture_rhs(self, example_3_1):
        system = build_singular_system(example_3_1)
        assert np.allclose(system.rhs, [28.0, 20.0, 16.0, 32.0])

    def test_matrix_reconstruction_exact(self, example_3_1):
        system = build_singular_system(example_3_1)
        rebuilt = np.diag(system.diag) + system.coupling_block
        assert np.array_equal(rebuilt, system.matrix)

    @pytest.mark.parametrize("seed", range(10))
    def test_always_singular(self, seed):
        rng = np.random.default_rng(600 + seed)
        n, l = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        instance = random_balanced_instance(rng, n, l)
        system = build_singular_system(instance)
        matrix = system.matrix
        scale = np.abs(matrix).max()
        assert abs(np.linalg.det(matrix)) <= 1e-8 * max(scale, 1.0) ** matrix.shape[0]
        assert system.row_dependency_residual() <= 1e-12


class TestBorderedHessian:
    def test_2x2_incidence_rows(self):
        instance = ProblemInstance(
            2, 2, np.zeros((2, 2)), np.ones((2, 2)), np.ones((2, 2)),
            [1.0, 1.0], [1.0, 1.0],
        )
        hessian = build_bordered_hessian(instance)
        expected = np.array(
            [[1, 1, 0, 0], [0, 0, 1, 1], [1, 0, 1, 0], [0, 1, 0, 1]], dtype=float
        )
        assert np.array_equal(hessian.incidence, expected)

    def test_column_sums_are_two(self):
        instance = ProblemInstance(
            2, 3, np.zeros((2, 3)), np.ones((2, 3)), np.ones((2, 3)),
            [3.0, 3.0], [2.0, 2.0, 2.0],
        )
        hessian = build_bordered_hessian(instance)
        assert np.array_equal(hessian.incidence.sum(axis=0), np.full(6, 2.0))

    @pytest.mark.parametrize("seed", range(10))
    def test_block_matrix_singular(self, seed):
        rng = np.random.default_rng(700 + seed)
        n, l = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        instance = random_balanced_instance(rng, n, l)
        hessian = build_bordered_hessian(instance)
        matrix = hessian.matrix
        scale = np.abs(matrix).max()
        assert abs(np.linalg.det(matrix)) <= 1e-8 * max(scale, 1.0) ** matrix.shape[0]
        assert hessian.row_dependency_residual() <= 1e-12


class TestTopChoicePlan:
    def test_quadratic_fixture(self, appendix_a_quadratic):
        plan = top_choice_plan(appendix_a_quadratic)
        expected = np.zeros((4, 4))
        for i, j in [(0, 1), (1, 3), (2, 0), (3, 2)]:
            expected[i, j] = 20.0
        assert np.array_equal(plan.pi, expected)

    def test_duplicate_top_choice_inapplicable(self):
        instance = ProblemInstance(
            2, 2, np.zeros((2, 2)), [[1.0, 5.0], [1.0, 5.0]], np.ones((2, 2)),
            [3.0, 3.0], [3.0, 3.0],
        )
        result = top_choice_plan(instance)
        assert isinstance(result, Inapplicable)
        assert "a2" in result.gates

    def test_agrees_with_integer_enumeration(self):
        instance = ProblemInstance(
            2, 2, np.zeros((2, 2)), [[1.0, 100.0], [100.0, 1.0]], np.ones((2, 2)),
            [3.0, 3.0], [3.0, 3.0],
        )
        plan = top_choice_plan(instance)
        assert np.array_equal(plan.pi, [[3.0, 0.0], [0.0, 3.0]])
        oracle = enumerate_integer_plans(instance, model="congestion")
        assert np.array_equal(plan.pi, oracle.best_plan)
        assert plan.objective == pytest.approx(oracle.best_objective)

    def test_boundary_gap_is_inapplicable(self):
        # Runner-up cost exactly at the concentration threshold: gate a3 asks
        # for a strict inequality, so the concentrated form must decline.
        mu = 2.0
        threshold = 1.0 + 1.0 * mu**2 * (1 - 0.5)
        instance = ProblemInstance(
            2, 2, np.zeros((2, 2)),
            [[1.0, threshold], [threshold, 1.0]],
            np.ones((2, 2)), [mu, mu], [mu, mu],
        )
        result = top_choice_plan(instance)
        assert isinstance(result, Inapplicable)
        assert "a3" in result.gates


class TestEnvelopeGradients:
    def test_interior_fixture_values(self, example_3_1):
        plan, _ = solve_congestion(example_3_1)
        dv_dc, dv_da = envelope_gradients(example_3_1, plan)
        assert np.allclose(dv_dc, [[4.0, 6.0], [2.0, 8.0]], atol=1e-7)
        assert np.allclose(dv_da, [[16.0, 36.0], [4.0, 64.0]], atol=1e-6)

    def test_matches_finite_differences(self, example_3_1):
        import dataclasses

        plan, _ = solve_congestion(example_3_1)
        dv_dc, _ = envelope_gradients(example_3_1, plan)
        step = 1e-4
        for i in range(2):
            for j in range(2):
                values = []
                for sign in (+1.0, -1.0):
                    c = example_3_1.linear_cost.copy()
                    c[i, j] += sign * step
                    bumped = dataclasses.replace(example_3_1, linear_cost=c)
                    bumped_plan, _ = solve_congestion(bumped)
                    values.append(bumped_plan.objective)
                fd = (values[0] - values[1]) / (2 * step)
                assert fd == pytest.approx(dv_dc[i, j], rel=1e-3)

    def test_zero_cell_rejected(self, example_3_2):
        plan, _ = solve_congestion(example_3_2)
        with pytest.raises(InteriorityError):
            envelope_gradients(example_3_2, plan)
