import numpy as np
import pytest
from pydantic import ValidationError

from fem import EllipticOperator, build_mesh
from oracle import instance_from_operator, pg_solve
from quasisolve import (
    ActiveSets,
    NewtonReport,
    SsnParams,
    SsnState,
    TerminationReason,
    compute_active_sets,
    newton_residual,
    newton_step,
    project_box,
    residual_norm,
    ssn_solve,
)


@pytest.mark.parametrize("v, rho, expected", [
    ([3.0, -1.0, 0.5], 4.0, [3.0, -1.0, 0.5]),
    ([5.0, -7.0], 4.0, [4.0, -4.0]),
    ([2.5, -0.1, 9.0], 0.0, [0.0, 0.0, 0.0]),
])
def test_project_box(v, rho, expected):
    np.testing.assert_array_equal(project_box(v, rho), expected)


def test_project_box_rejects_negative_radius():
    with pytest.raises(ValueError, match="nonnegative"):
        project_box([1.0], -0.5)


def test_active_sets_partition():
    sets = compute_active_sets(np.array([5.0, 0.0, -5.0]), np.zeros(3), 4.0)
    np.testing.assert_array_equal(sets.a_plus, [True, False, False])
    np.testing.assert_array_equal(sets.inactive, [False, True, False])
    np.testing.assert_array_equal(sets.a_minus, [False, False, True])
    assert sets.sizes() == {"a_plus": 1, "a_minus": 1, "inactive": 1}


def test_active_sets_ties_are_inactive():
    sets = compute_active_sets(np.array([4.0, -4.0]), np.zeros(2), 4.0)
    assert sets.inactive.all()
    assert not sets.active.any()


@pytest.mark.parametrize("rho", [0.0, 1.0, 100.0])
def test_active_sets_equal_inputs(rho, rng):
    u = rng.standard_normal(6)
    assert compute_active_sets(u, u.copy(), rho).inactive.all()


def test_state_validation():
    with pytest.raises(ValueError, match="Inconsistent"):
        SsnState(np.zeros(3), np.zeros(2), np.zeros(3), 1.0)
    with pytest.raises(ValueError, match="nonnegative"):
        SsnState.zeros(3, rho=-1.0)


def test_params_validation():
    with pytest.raises(ValueError, match="Damping"):
        SsnParams(q=1.0)
    with pytest.raises(ValueError, match="i_max"):
        SsnParams(k_max=0)
    with pytest.raises(ValueError, match="tol"):
        SsnParams(tol=0.0)
    with pytest.raises(ValueError, match="residual norm"):
        SsnParams(residual_norm="sup")


def test_report_reason_consistency():
    NewtonReport(converged=True, iterations=2, final_residual=1e-12,
                 termination_reason=TerminationReason.ACTIVE_SETS_STABLE)
    with pytest.raises(ValidationError):
        NewtonReport(converged=True, iterations=30, final_residual=1.0,
                     termination_reason=TerminationReason.MAX_ITERATIONS)


def test_residual_zero_state(operator3):
    b = newton_residual(SsnState.zeros(9, rho=2.0), operator3, np.zeros(9))
    assert b.shape == (27,)
    np.testing.assert_array_equal(b, 0.0)


def test_residual_exact_solution(operator3, rng):
    u = rng.uniform(-1.0, 1.0, 9)
    y = operator3.forward(u)
    y_delta = y.copy()
    # y = y_delta gives p = 0, and |u| <= rho keeps u fixed by the projection
    b = newton_residual(SsnState(y, np.zeros(9), u, 2.0), operator3, y_delta)
    np.testing.assert_allclose(b, 0.0, atol=1e-13)


def test_residual_matches_dense_evaluation(operator3, rng):
    y, p, u, y_delta = rng.standard_normal((4, 9))
    rho = 0.6
    b = newton_residual(SsnState(y, p, u, rho), operator3, y_delta)

    K = operator3.stiffness.toarray()
    M = operator3.consistent_mass.toarray()
    S = K + operator3.c * M
    expected = np.concatenate([
        S @ y - M @ u,
        S @ p - M @ (y - y_delta),
        u - np.minimum(np.maximum(u - p, -rho), rho),
    ])
    np.testing.assert_allclose(b, expected, atol=1e-12)


def test_mass_residual_norm(operator3, rng):
    b = rng.standard_normal(27)
    d = operator3.lumped_diagonal
    b1, b2, b3 = np.split(b, 3)
    expected = np.sqrt(np.sum(b1 ** 2 / d) + np.sum(b2 ** 2 / d) + np.sum(b3 ** 2 * d))
    assert residual_norm(b, operator3) == pytest.approx(expected, rel=1e-14)
    assert residual_norm(b, operator3, "euclidean") == pytest.approx(np.linalg.norm(b), rel=1e-14)


def test_step_with_inactive_constraint_solves_linear_system(rng):
    operator = EllipticOperator.from_mesh(build_mesh(2, 2), 1.0)
    y_delta = rng.standard_normal(4)
    state = SsnState.zeros(4, rho=1e6)
    sets = compute_active_sets(state.u, state.p, state.rho)
    assert sets.inactive.all()

    dy, dp, du = newton_step(state, sets, operator, y_delta)
    updated = state.step(dy, dp, du)
    np.testing.assert_allclose(updated.p, 0.0, atol=1e-12)
    np.testing.assert_allclose(updated.y, y_delta, atol=1e-12)
    assert np.linalg.norm(newton_residual(updated, operator, y_delta)) <= 1e-10


def test_step_with_positive_active_set_hits_bound(operator3):
    rho = 0.75
    state = SsnState(np.zeros(9), -(rho + 1.0) * np.ones(9), np.zeros(9), rho)
    sets = compute_active_sets(state.u, state.p, rho)
    assert sets.a_plus.all()

    dy, dp, du = newton_step(state, sets, operator3, np.zeros(9))
    np.testing.assert_allclose(state.u + du, rho, atol=1e-14)


def test_ssn_zero_data_converges_immediately(operator3):
    state, report = ssn_solve(np.zeros(9), 1.5, SsnState.zeros(9), SsnParams(), operator3)
    assert report.converged
    assert report.iterations == 0
    assert report.final_residual == 0.0
    assert report.termination_reason == TerminationReason.RESIDUAL_BELOW_TOL
    np.testing.assert_array_equal(state.u, 0.0)


@pytest.mark.parametrize("operator_name", ["operator3", "lumped3"])
def test_ssn_zero_radius_forces_zero_control(operator_name, rng, request):
    operator = request.getfixturevalue(operator_name)
    y_delta = rng.standard_normal(9)
    state, report = ssn_solve(y_delta, 0.0, SsnState.zeros(9), SsnParams(), operator)
    assert report.converged
    assert report.iterations == 0
    assert report.termination_reason == TerminationReason.RESIDUAL_BELOW_TOL
    np.testing.assert_array_equal(state.u, 0.0)
    np.testing.assert_array_equal(state.y, 0.0)
    np.testing.assert_allclose(state.p, operator.adjoint(-y_delta), atol=1e-12)

    # a nonzero warm start is discarded
    warm = SsnState(rng.standard_normal(9), rng.standard_normal(9), rng.standard_normal(9), 1.0)
    again, _ = ssn_solve(y_delta, 0.0, warm, SsnParams(), operator)
    np.testing.assert_array_equal(again.u, 0.0)


def test_default_params_use_mass_weighted_norm():
    assert SsnParams().residual_norm == "mass"


def test_ssn_inactive_constraint_one_step(operator3, rng, unconstrained_control):
    y_delta = rng.standard_normal(9)
    rho = 10.0 * np.max(np.abs(unconstrained_control(operator3, y_delta)))
    state, report = ssn_solve(y_delta, rho, SsnState.zeros(9), SsnParams(), operator3)
    assert report.converged
    assert report.iterations == 1
    assert report.termination_reason == TerminationReason.ACTIVE_SETS_STABLE
    np.testing.assert_allclose(state.y, y_delta, atol=1e-10)


def test_ssn_warm_start_with_correct_sets(operator3, rng, unconstrained_control):
    y_delta = rng.standard_normal(9)
    u_exact = unconstrained_control(operator3, y_delta)
    rho = 10.0 * np.max(np.abs(u_exact))
    start = SsnState(rng.standard_normal(9), np.zeros(9), u_exact + 0.1 * rng.standard_normal(9), rho)
    state, report = ssn_solve(y_delta, rho, start, SsnParams(), operator3)
    assert report.converged
    assert report.iterations == 1
    np.testing.assert_allclose(state.u, u_exact, atol=1e-8)


def test_ssn_bound_attained_and_monotone_residuals(lumped3, rng, unconstrained_control):
    y_delta = rng.standard_normal(9)
    rho = 0.5 * np.max(np.abs(unconstrained_control(lumped3, y_delta)))
    params = SsnParams()
    state, report = ssn_solve(y_delta, rho, SsnState.zeros(9), params, lumped3)

    assert report.converged
    assert report.final_residual < params.tol
    np.testing.assert_allclose(state.u, project_box(state.u - state.p, rho), atol=10 * params.tol)
    assert np.max(np.abs(state.u)) == pytest.approx(rho, abs=10 * params.tol)
    history = report.residual_history
    assert all(b < a for a, b in zip(history, history[1:]))


def test_ssn_matches_projected_gradient(lumped3, rng, unconstrained_control):
    y_delta = rng.standard_normal(9)
    rho = 0.5 * np.max(np.abs(unconstrained_control(lumped3, y_delta)))
    state, report = ssn_solve(y_delta, rho, SsnState.zeros(9), SsnParams(), lumped3)
    assert report.converged

    reference = pg_solve(instance_from_operator(lumped3, y_delta, rho))
    np.testing.assert_allclose(state.u, reference, atol=1e-6)
    assert np.max(np.abs(state.u)) == pytest.approx(rho, abs=1e-8)


def test_ssn_deterministic(operator3, rng):
    y_delta = rng.standard_normal(9)
    first, report_a = ssn_solve(y_delta, 0.3, SsnState.zeros(9), SsnParams(), operator3)
    second, report_b = ssn_solve(y_delta, 0.3, SsnState.zeros(9), SsnParams(), operator3)
    np.testing.assert_array_equal(first.u, second.u)
    np.testing.assert_array_equal(first.y, second.y)
    assert report_a == report_b


def test_ssn_reports_iteration_budget(operator3, rng):
    y_delta = rng.standard_normal(9)
    _, report = ssn_solve(y_delta, 0.05, SsnState.zeros(9), SsnParams(k_max=1), operator3)
    assert not report.converged
    assert report.termination_reason in (TerminationReason.MAX_ITERATIONS, TerminationReason.LINE_SEARCH_FAILURE)


def test_ssn_rejects_mismatched_start(operator3):
    with pytest.raises(ValueError, match="Start state"):
        ssn_solve(np.zeros(9), 1.0, SsnState.zeros(4), SsnParams(), operator3)


def test_ssn_verbose_trace(operator3, rng, capsys):
    ssn_solve(rng.standard_normal(9), 0.3, SsnState.zeros(9), SsnParams(), operator3, verbose=True)
    out = capsys.readouterr().out
    assert "SSN_ITERATION" in out
    assert "SSN_DONE" in out


def test_active_sets_same_active():
    a = ActiveSets(np.array([True, False]), np.array([False, False]), np.array([False, True]))
    b = ActiveSets(np.array([True, False]), np.array([False, False]), np.array([False, True]))
    c = ActiveSets(np.array([False, False]), np.array([False, False]), np.array([True, True]))
    assert a.same_active(b)
    assert not a.same_active(c)
