"""
Tests for the convex QP layer and the penalty minimiser.
"""

import itertools

import numpy as np
import pytest

from core.qp import FAILED, INFEASIBLE, OPTIMAL, QPInstance, QPResult, QPSolver, kkt_check


def _random_qp(seed: int, n: int = 3, m: int = 5):
    rng = np.random.default_rng(seed)
    root = rng.normal(size=(n, n))
    Q = root @ root.T + 0.5 * np.eye(n)
    c = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    b = A @ rng.normal(size=n) + rng.uniform(0.1, 1.0, size=m)
    return Q, c, A, b


def _random_psd_qp(seed: int, n: int = 3):
    """PSD, possibly rank-deficient Q with c in its range so the program stays bounded."""
    rng = np.random.default_rng(seed)
    rank = int(rng.integers(1, n + 1))
    m = int(rng.integers(1, 13))
    root = rng.normal(size=(n, rank))
    Q = root @ root.T
    c = Q @ rng.normal(size=n)
    A = rng.normal(size=(m, n))
    b = A @ rng.normal(size=n) + rng.uniform(0.1, 1.0, size=m)
    return Q, c, A, b


def _enumerated_optimum(Q, c, A, b):
    """Optimal value over every active set of at most n rows whose KKT system holds."""
    n, m = Q.shape[0], A.shape[0]
    best = None
    for size in range(0, min(n, m) + 1):
        for active in itertools.combinations(range(m), size):
            A_s = A[list(active)]
            K = np.block([[Q, A_s.T], [A_s, np.zeros((size, size))]])
            rhs = np.concatenate([-c, b[list(active)]])
            x = np.linalg.lstsq(K, rhs, rcond=None)[0]
            if np.max(np.abs(K @ x - rhs)) > 1e-9 * (1.0 + np.max(np.abs(rhs))):
                continue
            u, lam = x[:n], x[n:]
            if np.all(A @ u <= b + 1e-9) and np.all(lam >= -1e-9):
                value = 0.5 * u @ Q @ u + c @ u
                if best is None or value < best[1]:
                    best = (u, value)
    return best


@pytest.mark.parametrize("seed", range(6))
def test_solve_matches_active_set_enumeration(solver, seed):
    Q, c, A, b = _random_qp(seed)
    result = solver.solve(QPInstance(Q, A, b, c=c))
    u_ref, value_ref = _enumerated_optimum(Q, c, A, b)

    assert result["status"] == OPTIMAL
    assert result["kkt"]["passed"]
    assert np.allclose(result["u"], u_ref, atol=1e-6)
    assert np.isclose(result["objective"], value_ref, atol=1e-8)


def test_psd_programs_match_enumerated_optimum(solver):
    for seed in range(200):
        Q, c, A, b = _random_psd_qp(seed)
        result = solver.solve(QPInstance(Q, A, b, c=c))
        _, value_ref = _enumerated_optimum(Q, c, A, b)

        assert result["status"] == OPTIMAL, seed
        assert np.all(A @ result["u"] <= b + 1e-8), seed
        assert abs(result["objective"] - value_ref) <= 1e-8 * (1.0 + abs(value_ref)), seed


def test_iteration_limited_interior_point_is_polished():
    # minimize 1/2 |u|^2 - 2 (u0 + u1) s.t. u <= 1
    instance = QPInstance(np.eye(2), A=np.eye(2), b=[1.0, 1.0], c=[-2.0, -2.0])
    result = QPSolver(interior_iterations=1).solve(instance)
    assert result["status"] == OPTIMAL
    assert result["kkt"]["passed"]
    assert np.allclose(result["u"], [1.0, 1.0], atol=1e-10)
    assert np.allclose(result["ineq_duals"], [1.0, 1.0], atol=1e-10)


def test_iteration_limited_without_polish_fails_kkt():
    instance = QPInstance(np.eye(2), A=np.eye(2), b=[1.0, 1.0], c=[-2.0, -2.0])
    result = QPSolver(polish=False, interior_iterations=1).solve(instance)
    assert result["status"] == FAILED
    assert "KKT residual" in result["message"]


def test_solve_with_equalities_and_sign_constraints(solver):
    # minimize 1/2 (u0^2 + u1^2) s.t. u0 + u1 = 1, u1 >= 0, u0 <= 0.2
    instance = QPInstance(np.eye(2), A=[[1.0, 0.0]], b=[0.2], H=[[1.0, 1.0]], g=[1.0], nonneg=[1])
    result = solver.solve(instance)
    assert result["status"] == OPTIMAL
    assert np.allclose(result["u"], [0.2, 0.8], atol=1e-8)
    assert np.isclose(result["objective"], 0.5 * (0.04 + 0.64))


def test_infeasible_program_is_reported(solver):
    instance = QPInstance(np.eye(1), A=[[1.0], [-1.0]], b=[-1.0, -1.0])
    result = solver.solve(instance)
    assert result["status"] == INFEASIBLE
    assert result["u"] is None


def test_linear_objective_with_zero_hessian(solver):
    instance = QPInstance(np.zeros((1, 1)), A=[[1.0], [-1.0]], b=[2.0, 0.0], c=[-1.0])
    result = solver.solve(instance)
    assert result["status"] == OPTIMAL
    assert np.isclose(result["u"][0], 2.0, atol=1e-8)


def test_kkt_check_on_hand_solution():
    instance = QPInstance(np.eye(1), A=[[1.0]], b=[0.5], c=[-1.0])
    good = QPResult(status=OPTIMAL, u=np.array([0.5]), ineq_duals=np.array([0.5]), eq_duals=np.zeros(0),
                    objective=instance.objective(np.array([0.5])), kkt=None, message="")
    bad = dict(good, u=np.array([1.0]), ineq_duals=np.array([0.0]))
    assert kkt_check(instance, good)["passed"]
    report = kkt_check(instance, bad)
    assert not report["passed"]
    assert report["primal"] > 0


def test_instance_rejects_inconsistent_shapes():
    with pytest.raises(ValueError):
        QPInstance(np.eye(2), A=[[1.0, 0.0]], b=[1.0, 2.0])
    with pytest.raises(ValueError):
        QPInstance(np.ones((2, 3)))


def test_solver_is_deterministic(solver):
    Q, c, A, b = _random_qp(11)
    first = solver.solve(QPInstance(Q, A, b, c=c))
    second = solver.solve(QPInstance(Q, A, b, c=c))
    assert np.array_equal(first["u"], second["u"])


class TestPenaltyMinimiser:
    def test_equality_row_closed_form(self, solver):
        rho = 3.0
        solve = solver.minimize_penalty(np.eye(1), np.eye(1), np.array([2.0]), np.zeros(1), rho,
                                        np.array([False]))
        assert solve["status"] == OPTIMAL
        assert np.isclose(solve["u"][0], rho * 2.0 / (1.0 + rho))
        assert np.isclose(solve["value"], rho * 4.0 / (2.0 * (1.0 + rho)))

    def test_slack_row_absorbs_slack_inequality(self, solver):
        solve = solver.minimize_penalty(np.eye(1), np.eye(1), np.array([1.0]), np.zeros(1), 1.0,
                                        np.array([True]))
        assert solve["status"] == OPTIMAL
        assert np.isclose(solve["u"][0], 0.0)
        assert np.isclose(solve["slack"][0], 1.0)
        assert np.isclose(solve["value"], 0.0)

    @pytest.mark.parametrize("seed", range(4))
    def test_newton_agrees_with_cvxpy(self, solver, seed):
        rng = np.random.default_rng(seed)
        n, m = 4, 6
        root = rng.normal(size=(n, n))
        Q = root @ root.T
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        nu = rng.normal(size=m)
        slack_rows = np.array([True, True, True, False, False, True])
        rho = 5.0

        newton = solver.minimize_penalty(Q, A, b, nu, rho, slack_rows)
        reference = solver.minimize_penalty_cvxpy(Q, A, b, nu, rho, slack_rows)

        assert newton["status"] == OPTIMAL
        assert np.isclose(newton["value"], reference["value"], rtol=1e-5, atol=1e-6)

        residual = A @ newton["u"] + newton["slack"] - b
        lagrangian = 0.5 * newton["u"] @ Q @ newton["u"] + nu @ residual + 0.5 * rho * residual @ residual
        assert np.isclose(newton["value"], lagrangian, rtol=1e-9, atol=1e-9)
        assert np.all(newton["slack"] >= 0.0)
        assert np.all(newton["slack"][~slack_rows] == 0.0)

    def test_failed_status_constant_is_distinct(self):
        assert len({OPTIMAL, INFEASIBLE, FAILED}) == 3
