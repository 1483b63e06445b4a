"""
Tests for planar geometry: frames, contacts, sweep envelopes, signed distance and orientation bounds.
"""

import math

import numpy as np
import pytest
import shapely
from hypothesis import given, settings, strategies as st
from shapely.geometry import LineString, Point
from shapely.ops import unary_union

from core.geometry import (
    ContactAssignment,
    GraspConfig,
    Polygon,
    Pose2D,
    characteristic_length,
    contact_geometry,
    cross_section,
    edge_contact,
    rotation,
    signed_distance,
    sweep_bounds,
    theta_bounds,
    to_gripper_frame,
    validate_polygon,
)
from utils.errors import GeometryError, ThetaBoundsError

SQUARE = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
PENTAGON = [(0.0, -1.0), (1.2, -0.3), (0.8, 1.0), (-0.7, 0.9), (-1.1, -0.2)]
SQUEEZE = [ContactAssignment(0, 3, "L", 0), ContactAssignment(0, 1, "R", 1)]

angles = st.floats(min_value=-math.pi, max_value=math.pi, allow_nan=False)
coords = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


def test_rotation_is_orthonormal():
    rot = rotation(0.7)
    assert np.allclose(rot @ rot.T, np.eye(2))
    assert np.isclose(np.linalg.det(rot), 1.0)


def test_gripper_frame_mapping_by_hand():
    polygon = Polygon([(1.0, 2.0), (2.0, 2.0), (1.0, 3.0)])
    z_k = GraspConfig(np.array([1.0, 1.0]), math.pi / 2, 0.5, np.array([0.5]))
    left = to_gripper_frame(polygon, None, z_k, "L")
    right = to_gripper_frame(polygon, None, z_k, "R")
    assert np.allclose(left.vertices[0], [1.0, 0.0])
    assert np.allclose(right.vertices[0], [0.5, 0.0])


def test_box_normals_point_inward():
    polygon = Polygon(SQUARE)
    _, t_left, n_left = edge_contact(polygon, 3, 0.5)
    _, t_right, n_right = edge_contact(polygon, 1, 0.5)
    assert np.allclose(n_left, [1.0, 0.0])
    assert np.allclose(n_right, [-1.0, 0.0])
    assert np.allclose(t_left, [0.0, -1.0])
    assert np.allclose(t_right, [0.0, 1.0])


def test_clockwise_polygon_keeps_inward_normals():
    clockwise = Polygon(SQUARE[::-1])
    assert not clockwise.is_ccw()
    for e in range(clockwise.n_edges):
        p, _, n = edge_contact(clockwise, e, 0.5)
        assert signed_distance(p + 1e-3 * n, clockwise) < 0


def test_reversed_polygon_edge_mapping():
    polygon = Polygon(PENTAGON)
    flipped = polygon.reversed()
    n = polygon.n_edges
    for e in range(n):
        a, b = polygon.edge(e)
        c, d = flipped.edge((n - 2 - e) % n)
        assert np.allclose(a, d) and np.allclose(b, c)


@settings(max_examples=40, deadline=None)
@given(coords, coords, angles, coords, coords, angles, st.floats(min_value=0.05, max_value=0.95))
def test_contact_frames_follow_rigid_motion(x, y, phi, px, py, theta, d):
    """Jaw-frame contacts are the world contacts under R(-theta)(x - p), normals stay inward."""
    polygon = Polygon(PENTAGON)
    pose = Pose2D(x, y, phi)
    z_k = GraspConfig(np.array([px, py]), theta, 0.0, np.array([d]))

    p_world, t_world, _ = contact_geometry(polygon, 2, d, pose_world=pose)
    p_grip, t_grip, n_grip = contact_geometry(polygon, 2, d, z_k, "L", pose)

    rot = rotation(-theta)
    assert np.allclose(p_grip, rot @ (p_world - np.array([px, py])), atol=1e-9)
    assert np.allclose(t_grip, rot @ t_world, atol=1e-9)
    left = to_gripper_frame(polygon, pose, z_k, "L")
    assert signed_distance(p_grip + 1e-4 * n_grip, left) < 0


@settings(max_examples=30, deadline=None)
@given(coords, coords, angles)
def test_transforms_are_isometries(x, y, phi):
    polygon = Polygon(PENTAGON)
    moved = polygon.transformed(rotation(phi), np.array([x, y]))
    assert np.isclose(abs(moved.signed_area()), abs(polygon.signed_area()))
    original = np.linalg.norm(polygon.vertices - polygon.vertices[0], axis=1)
    after = np.linalg.norm(moved.vertices - moved.vertices[0], axis=1)
    assert np.allclose(original, after)


def test_characteristic_length_of_centred_square():
    assert np.isclose(characteristic_length(Polygon(SQUARE), [3, 1]), math.sqrt(2.0))
    unit = Polygon([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)])
    assert np.isclose(characteristic_length(unit, [3, 1, 3]), math.sqrt(0.5))


def test_characteristic_length_needs_contacts():
    with pytest.raises(GeometryError):
        characteristic_length(Polygon(SQUARE), [])


def test_validate_polygon_rejects_bad_input():
    with pytest.raises(GeometryError):
        validate_polygon(Polygon([(0.0, 0.0), (1.0, 0.0)]))
    with pytest.raises(GeometryError):
        validate_polygon(Polygon([(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]))
    validate_polygon(Polygon(PENTAGON))


def test_cross_section_matches_line_intersection():
    polygon = Polygon(PENTAGON)
    heights = np.linspace(-0.95, 0.85, 23)
    x_min, x_max = cross_section(polygon, heights)
    for y, lo, hi in zip(heights, x_min, x_max):
        chord = polygon.shape.intersection(LineString([(-10.0, y), (10.0, y)]))
        assert np.isclose(lo, chord.bounds[0], atol=1e-9)
        assert np.isclose(hi, chord.bounds[2], atol=1e-9)


def test_cross_section_misses_give_infinite_bounds():
    x_min, x_max = cross_section(Polygon(SQUARE), np.array([-2.0, 0.0, 2.0]))
    assert np.isinf(x_min[0]) and x_min[0] > 0
    assert np.isinf(x_max[2]) and x_max[2] < 0
    assert x_min[1] == -1.0 and x_max[1] == 1.0


def test_sweep_bounds_take_extremes_over_shapes_and_obstacles():
    small = Polygon([(-0.2, -0.2), (0.2, -0.2), (0.2, 0.2), (-0.2, 0.2)])
    left_big = Polygon(SQUARE)
    right_big = left_big.translated(-0.5)
    obstacle = Polygon([(-3.0, 0.5), (-2.0, 0.5), (-2.0, 0.8), (-3.0, 0.8)])
    y = np.array([-1.5, 0.0, 0.6, 1.5])
    b_upper, b_lower = sweep_bounds([left_big, small], [right_big, small], y, [(obstacle, obstacle)])

    assert np.isinf(b_upper[0]) and np.isinf(b_lower[0])
    assert b_upper[1] == -1.0
    assert b_lower[1] == 0.5
    assert b_upper[2] == -3.0
    assert np.isinf(b_upper[3])


RAY_STEP = 1e-4


def _star_polygon(rng, centre, n=7):
    angles = np.sort(rng.uniform(0.0, 2 * math.pi, size=n))
    radii = rng.uniform(0.5, 1.0, size=n)
    return Polygon(np.c_[centre[0] + radii * np.cos(angles), centre[1] + radii * np.sin(angles)])


def _random_scene(seed):
    rng = np.random.default_rng(seed)
    lefts = [_star_polygon(rng, rng.uniform([-2.0, -1.0], [2.0, 1.0])) for _ in range(int(rng.integers(1, 4)))]
    gammas = rng.uniform(-0.5, 1.5, size=len(lefts))
    rights = [shape.translated(-gamma) for shape, gamma in zip(lefts, gammas)]
    obstacle = _star_polygon(rng, rng.uniform([-3.0, -1.0], [3.0, 1.0]))
    obstacles = [(obstacle, obstacle.translated(-float(gammas.min())))]

    vertex_heights = np.concatenate([s.vertices[:, 1] for s in lefts + [obstacle]])
    heights = []
    while len(heights) < 8:
        y = rng.uniform(-2.2, 2.2)
        if np.min(np.abs(vertex_heights - y)) > 1e-2 and all(abs(y - h) > 1e-3 for h in heights):
            heights.append(y)
    return lefts, rights, obstacles, np.sort(heights)


def _ray_extreme(shapes, y, leftmost):
    """Boundary of the union met by a dense horizontal ray, refined by bisection."""
    union = unary_union([s.shape for s in shapes])
    shapely.prepare(union)
    x_min, _, x_max, _ = union.bounds
    xs = np.arange(x_min - 2 * RAY_STEP, x_max + 2 * RAY_STEP, RAY_STEP)
    hits = np.flatnonzero(shapely.intersects_xy(union, xs, np.full_like(xs, y)))
    if hits.size == 0:
        return np.inf if leftmost else -np.inf
    inside = xs[hits[0]] if leftmost else xs[hits[-1]]
    outside = inside - RAY_STEP if leftmost else inside + RAY_STEP
    for _ in range(50):
        mid = 0.5 * (inside + outside)
        if union.intersects(Point(mid, y)):
            inside = mid
        else:
            outside = mid
    return inside


@pytest.mark.parametrize("seed", range(50))
def test_sweep_bounds_match_dense_ray_sampling(seed):
    lefts, rights, obstacles, y = _random_scene(seed)
    b_upper, b_lower = sweep_bounds(lefts, rights, y, obstacles)

    all_lefts = lefts + [pair[0] for pair in obstacles]
    all_rights = rights + [pair[1] for pair in obstacles]
    for i, height in enumerate(y):
        upper = _ray_extreme(all_lefts, height, leftmost=True)
        lower = _ray_extreme(all_rights, height, leftmost=False)
        if np.isinf(upper):
            assert np.isinf(b_upper[i]) and b_upper[i] > 0
        else:
            assert abs(b_upper[i] - upper) <= 1e-6
        if np.isinf(lower):
            assert np.isinf(b_lower[i]) and b_lower[i] < 0
        else:
            assert abs(b_lower[i] - lower) <= 1e-6


def test_sweep_bounds_reject_unsorted_grid():
    with pytest.raises(GeometryError):
        sweep_bounds([Polygon(SQUARE)], [Polygon(SQUARE)], np.array([0.0, -1.0]))


def test_signed_distance_sign_convention():
    polygon = Polygon(SQUARE)
    assert np.isclose(signed_distance((0.0, 0.0), polygon), -1.0)
    assert np.isclose(signed_distance((3.0, 0.0), polygon), 2.0)
    assert signed_distance((1.0, 0.3), polygon) == 0.0


def test_theta_bounds_of_centred_square():
    low, high = theta_bounds(Polygon(SQUARE), SQUEEZE, 0.3)
    assert low < 0.0 < high
    assert math.radians(80.0) < high < math.radians(90.0)
    assert abs(low + high) < math.radians(0.2)


def test_theta_bounds_follow_world_rotation():
    phi = math.radians(30.0)
    low, high = theta_bounds(Polygon(SQUARE), SQUEEZE, 0.3)
    low_r, high_r = theta_bounds(Polygon(SQUARE), SQUEEZE, 0.3, Pose2D(0.0, 0.0, phi))
    assert abs((low_r - phi) - low) < math.radians(0.15)
    assert abs((high_r - phi) - high) < math.radians(0.15)


def test_theta_bounds_without_squeeze_raise():
    same_side = [ContactAssignment(0, 3, "L", 0), ContactAssignment(0, 3, "R", 1)]
    with pytest.raises(ThetaBoundsError):
        theta_bounds(Polygon(SQUARE), same_side, 0.3, step_deg=10.0)
