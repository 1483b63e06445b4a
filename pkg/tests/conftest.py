"""
Shared fixtures for the gripper co-design test suite.
"""

import os
import sys

import numpy as np
import pytest

ROOT_PATH = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SRC_PATH = os.path.join(ROOT_PATH, "src")
for path in (ROOT_PATH, SRC_PATH):
    if path not in sys.path:
        sys.path.insert(0, path)

from core.qp import QPSolver  # noqa: E402
from sample_data.sample_problems import get_sample_problem  # noqa: E402
from utils.config import default_parameters  # noqa: E402


@pytest.fixture
def params():
    return default_parameters()


@pytest.fixture
def fast_params():
    """Small search settings that keep end-to-end runs quick."""
    return default_parameters(starts=3, iterations=4, outer_iterations=3, n_y=16, post_process=1, seed=7)


@pytest.fixture(scope="session")
def solver():
    return QPSolver(tolerance=1e-8)


@pytest.fixture
def square_problem(params):
    return get_sample_problem("square", params)


@pytest.fixture
def two_rectangles(params):
    return get_sample_problem("two_rectangles", params)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def square_solution(square_problem, solver):
    """Solution file for the centred square grasped at a slight tilt."""
    from core.geometry import GraspConfig
    from core.shape import solve_shape, uniform_grid
    from utils.problem_io import build_solution

    z = square_problem.layout.join([GraspConfig(np.zeros(2), 0.2, 0.0, np.array([0.5, 0.5]))])
    shape = solve_shape(z, square_problem, uniform_grid(square_problem.params), solver)
    candidate = {
        "z": z, "surface": shape["surface"], "rank": 0, "start_index": 3, "seed": 99,
        "value": shape["cost"], "residual": 1e-9, "shape_cost": shape["cost"],
        "grasp_quality": [{"object": 0, "sign": "+", "value": 1.5}], "grasp_quality_total": float("inf"),
    }
    return build_solution(candidate, square_problem)
