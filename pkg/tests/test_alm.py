"""
Tests for the augmented Lagrangian search.
"""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from core.alm import (
    PenaltyEvaluator,
    consolidate,
    create_alm_state,
    dual_penalty_update,
    envelope_gradient,
    forward_difference_gradient,
    inner_min,
    multistart_optimize,
    outer_step,
    rank_candidates,
    restore_best,
    start_seeds,
    system_rows,
)
from core.geometry import GraspConfig
from core.problem import GraspProblem
from core.qp import OPTIMAL
from sample_data.sample_problems import get_sample_problem
from utils.config import default_parameters
from utils.errors import GeometryError, StructuralFailure

SMALL_GRID = np.linspace(-1.2, 1.2, 13)


def _square_z(problem, theta=0.1, gamma=0.0, position=(0.0, 0.0)):
    return problem.layout.join([GraspConfig(np.array(position), theta, gamma, np.array([0.5, 0.5]))])


def _rectangle_configs():
    return [
        GraspConfig(np.array([0.0, 0.0]), 0.0, 0.0, np.array([0.5, 0.5])),
        GraspConfig(np.array([3.0, -0.6]), 0.1, 0.0, np.array([0.4, 0.6])),
    ]


class StubEvaluator:
    """Looks values up by configuration."""

    def __init__(self, table):
        self.table = table
        self.calls = 0

    def value(self, z, nu, rho):
        self.calls += 1
        return self.table[tuple(np.asarray(z, dtype=float))]


class TestDualUpdate:
    def test_hand_arithmetic(self):
        state = create_alm_state(np.zeros(2), 1, default_parameters())
        system = SimpleNamespace(A=np.eye(1), b=np.array([0.5]))
        updated = dual_penalty_update(state, system, np.array([1.0]))
        assert np.allclose(updated["nu"], [0.5])
        assert updated["rho"] == 2.0
        assert updated["iteration"] == 1

        again = dual_penalty_update(updated, system, np.array([1.0]))
        assert np.allclose(again["nu"], [1.5])
        assert again["rho"] == 4.0

    def test_structural_iteration_keeps_multipliers(self):
        state = create_alm_state(np.zeros(2), 3, default_parameters())
        state["nu"] = np.array([1.0, -2.0, 0.5])
        updated = dual_penalty_update(state, None, None)
        assert np.array_equal(updated["nu"], state["nu"])
        assert updated["rho"] == 2.0
        assert updated["iteration"] == 1


def test_restore_best_rescores_history():
    z0, z1, z2 = np.array([0.0]), np.array([1.0]), np.array([2.0])
    evaluator = StubEvaluator({(0.0,): 4.0, (1.0,): 5.0, (2.0,): 3.0})
    state = create_alm_state(z0, 1, default_parameters())
    state["history"] = [{"z": z1, "value": 0.0}, {"z": z2, "value": 0.0}]

    restored = restore_best(state, evaluator)
    assert np.array_equal(restored["z"], z2)
    assert restored["value"] == 3.0
    assert evaluator.calls == 3


def test_restore_best_keeps_incumbent_on_ties():
    evaluator = StubEvaluator({(0.0,): 1.0, (1.0,): 1.0})
    state = create_alm_state(np.array([0.0]), 1, default_parameters())
    state["history"] = [{"z": np.array([1.0]), "value": 1.0}]
    assert np.array_equal(restore_best(state, evaluator)["z"], [0.0])


def test_forward_difference_gradient_steps_back_at_upper_bound():
    f = lambda z: float(np.sum(z ** 2))
    z = np.array([0.5, 1.0])
    bounds = [(-1.0, 1.0), (-1.0, 1.0)]
    gradient = forward_difference_gradient(f, z, f(z), bounds, 1e-6)
    assert np.allclose(gradient, 2 * z, atol=1e-4)


class QuadraticSystem:
    """L(z, u) = 1/2 |u|^2 + rho/2 |u - z|^2, minimised by u* = rho z / (1 + rho)."""

    def __init__(self, z):
        self.z = np.asarray(z, dtype=float)

    def lagrangian(self, u, nu, rho):
        return float(0.5 * u @ u + 0.5 * rho * (u - self.z) @ (u - self.z))


class QuadraticEvaluator:
    def value_at(self, z, u, nu, rho):
        return QuadraticSystem(z).lagrangian(u, nu, rho)


def test_envelope_gradient_of_closed_form():
    rho = 3.0
    z = np.array([0.4, -1.2, 2.0])
    u = rho * z / (1.0 + rho)
    evaluation = {"u": u, "system": QuadraticSystem(z), "value": 0.0, "structural": False}
    bounds = [(-5.0, 5.0)] * 3
    gradient = envelope_gradient(QuadraticEvaluator(), z, evaluation, None, rho, bounds, 1e-7)
    assert np.allclose(gradient, rho * z / (1.0 + rho), atol=1e-5)


def test_envelope_gradient_agrees_with_resolved_differences(square_problem, solver, rng):
    evaluator = PenaltyEvaluator(square_problem, solver, SMALL_GRID)
    z = _square_z(square_problem)
    nu = 0.05 * rng.normal(size=evaluator.n_rows)
    rho = 10.0
    bounds = square_problem.config_bounds()
    evaluation = evaluator.evaluate(z, nu, rho)

    envelope = envelope_gradient(evaluator, z, evaluation, nu, rho, bounds, 1e-6)
    resolved = forward_difference_gradient(lambda x: evaluator.value(x, nu, rho), z, evaluation["value"], bounds, 1e-6)
    assert np.linalg.norm(envelope - resolved) <= 1e-2 * (1.0 + np.linalg.norm(resolved))


@pytest.mark.parametrize("gradient", ["envelope", "resolve"])
def test_outer_step_never_worsens_the_incumbent(solver, gradient):
    params = default_parameters(outer_iterations=3, gradient=gradient)
    problem = get_sample_problem("square", params)
    evaluator = PenaltyEvaluator(problem, solver, SMALL_GRID)
    state = create_alm_state(_square_z(problem, theta=0.3), evaluator.n_rows, params)
    start_value = evaluator.value(state["z"], state["nu"], state["rho"])

    z_new = outer_step(state, evaluator, problem.config_bounds(), params)
    assert evaluator.value(z_new, state["nu"], state["rho"]) <= start_value + 1e-8 * (1.0 + abs(start_value))


def test_restore_best_never_raises_the_incumbent(square_problem, solver, rng):
    evaluator = PenaltyEvaluator(square_problem, solver, SMALL_GRID)
    params = square_problem.params
    state = create_alm_state(_square_z(square_problem), evaluator.n_rows, params)
    state["nu"] = 0.05 * rng.normal(size=evaluator.n_rows)
    state["history"] = [{"z": _square_z(square_problem, theta=t), "value": 0.0} for t in (-0.2, 0.05, 0.3)]

    incumbent = evaluator.value(state["z"], state["nu"], state["rho"])
    restored = restore_best(state, evaluator)
    assert restored["value"] <= incumbent + 1e-9 * (1.0 + abs(incumbent))
    for entry in state["history"]:
        value = evaluator.value(entry["z"], state["nu"], state["rho"])
        assert restored["value"] <= value + 1e-9 * (1.0 + abs(value))


def test_system_rows_match_assembled_matrix(params):
    problem = get_sample_problem("two_rectangles", params)
    z = problem.layout.join(_rectangle_configs())
    system = consolidate(z, problem, SMALL_GRID)
    expected = 2 * 2 * (7 + 5) + 3 * len(SMALL_GRID) + 2 * 4
    assert system_rows(problem, len(SMALL_GRID)) == expected == system.A.shape[0]
    assert len(system.b) == expected
    assert system.A.shape[1] == system.Q.shape[0]


def test_inner_min_is_a_global_minimum(square_problem, solver, rng):
    system = consolidate(_square_z(square_problem), square_problem, SMALL_GRID)
    nu = 0.1 * rng.normal(size=system.A.shape[0])
    rho = 10.0
    result = inner_min(system, nu, rho, solver)

    assert result["status"] == OPTIMAL
    best = system.lagrangian(result["u"], nu, rho)
    assert math.isclose(result["value"], best, rel_tol=1e-8, abs_tol=1e-8)
    assert np.all(result["u"][system.slack_columns] >= 0.0)
    for _ in range(20):
        trial = result["u"] + 1e-3 * rng.normal(size=len(result["u"]))
        trial[system.slack_columns] = np.maximum(trial[system.slack_columns], 0.0)
        assert system.lagrangian(trial, nu, rho) >= best - 1e-9


def _random_systems(count, seed=2024):
    rng = np.random.default_rng(seed)
    problems = [get_sample_problem(name, default_parameters()) for name in ("square", "two_rectangles")]
    systems = []
    while len(systems) < count:
        problem = problems[len(systems) % 2]
        lower, upper = np.array(problem.config_bounds()).T
        try:
            systems.append(consolidate(rng.uniform(lower, upper), problem, SMALL_GRID))
        except (StructuralFailure, GeometryError):
            continue
    return systems, rng


def test_inner_min_beats_random_perturbations(solver):
    systems, rng = _random_systems(20)
    for system in systems:
        nu = 0.1 * rng.normal(size=system.A.shape[0])
        rho = float(rng.uniform(1.0, 100.0))
        result = inner_min(system, nu, rho, solver)
        best = system.lagrangian(result["u"], nu, rho)
        assert result["status"] == OPTIMAL

        scales = rng.choice([1e-4, 1e-2, 1.0], size=1000)
        for scale in scales:
            trial = result["u"] + scale * rng.normal(size=len(result["u"]))
            trial[system.slack_columns] = np.maximum(trial[system.slack_columns], 0.0)
            assert system.lagrangian(trial, nu, rho) >= best - 1e-9 * (1.0 + abs(best))


def test_objective_parts_split_the_cost(square_problem, solver):
    system = consolidate(_square_z(square_problem), square_problem, SMALL_GRID)
    result = inner_min(system, np.zeros(system.A.shape[0]), 100.0, solver)
    parts = system.objective_parts(result["u"])
    assert len(parts["grasp_quality"]) == 2
    assert math.isclose(parts["grasp_quality_total"], sum(e["value"] for e in parts["grasp_quality"]), rel_tol=1e-9)
    quadratic = 0.5 * result["u"] @ system.Q @ result["u"]
    assert math.isclose(quadratic, parts["grasp_quality_total"] + parts["shape_cost"], rel_tol=1e-9)
    assert system.surface(result["u"]).y.tolist() == SMALL_GRID.tolist()


def test_penalty_value_is_invariant_to_object_order(params, solver):
    problem = get_sample_problem("two_rectangles", params)
    swapped = GraspProblem(problem.objects[::-1], params, "swapped")
    configs = _rectangle_configs()
    forward = PenaltyEvaluator(problem, solver, SMALL_GRID)
    backward = PenaltyEvaluator(swapped, solver, SMALL_GRID)

    value = forward.value(problem.layout.join(configs), np.zeros(forward.n_rows), 10.0)
    value_swapped = backward.value(swapped.layout.join(configs[::-1]), np.zeros(backward.n_rows), 10.0)
    assert math.isclose(value, value_swapped, rel_tol=1e-8)


def test_structural_configuration_gets_finite_penalty(square_problem, solver):
    evaluator = PenaltyEvaluator(square_problem, solver, SMALL_GRID)
    evaluation = evaluator.evaluate(_square_z(square_problem, theta=math.pi / 2), np.zeros(evaluator.n_rows), 1.0)
    assert evaluation["structural"]
    assert math.isfinite(evaluation["value"])
    assert evaluation["value"] >= square_problem.params.structural_penalty


def test_start_seeds_are_reproducible_and_distinct():
    seeds = start_seeds(42, 5)
    assert seeds == start_seeds(42, 5)
    assert len(set(seeds)) == 5
    assert seeds != start_seeds(43, 5)


def test_rank_candidates_puts_structural_last():
    candidates = [
        {"start_index": 0, "structural": True, "value": 1.0},
        {"start_index": 1, "structural": False, "value": 3.0},
        {"start_index": 2, "structural": False, "value": 2.0},
        {"start_index": 3, "structural": False, "value": 2.0},
    ]
    ranked = rank_candidates(candidates)
    assert [c["start_index"] for c in ranked] == [2, 3, 1, 0]
    assert [c["rank"] for c in ranked] == [0, 1, 2, 3]


@pytest.mark.slow
def test_multistart_is_deterministic(solver):
    params = default_parameters(starts=2, iterations=2, outer_iterations=2, n_y=12, seed=5)
    problem = get_sample_problem("square", params)
    first = multistart_optimize(problem, qp_solver=solver)
    second = multistart_optimize(get_sample_problem("square", params), qp_solver=solver)

    assert [c["rank"] for c in first] == [0, 1]
    assert first[0]["value"] <= first[1]["value"]
    for a, b in zip(first, second):
        assert a["start_index"] == b["start_index"]
        assert np.array_equal(a["z"], b["z"])
        assert a["value"] == b["value"]
    best = first[0]
    assert not best["structural"]
    assert best["surface"] is not None
    assert best["iterations"] == 2
    lower, upper = np.array(problem.config_bounds()).T
    assert np.all(best["z"] >= lower - 1e-12) and np.all(best["z"] <= upper + 1e-12)
