"""
Planar geometry for parallel-jaw gripper co-design.

Polygons, world and jaw-frame transforms, contact parameterisation,
characteristic lengths, sweep envelopes, signed distance and the admissible
grasp-orientation interval of an object.

Frame convention: a world point x maps into the left jaw frame G_L of object k
as R(-theta) (x - p_G); the right jaw frame G_R is G_L translated by +gamma
along x, so G_R coordinates are G_L coordinates minus (gamma, 0). The jaw
closing axis is +x in both frames.
"""

import logging
import math
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from shapely.geometry import Point
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.validation import explain_validity

from utils.errors import GeometryError, ThetaBoundsError

logger = logging.getLogger(__name__)

JAWS = ("L", "R")
HORIZONTAL_TANGENT_EPS = 1e-9


class Pose2D(NamedTuple):
    """Rigid transform taking model coordinates to world coordinates."""
    x: float = 0.0
    y: float = 0.0
    phi: float = 0.0


class GraspConfig(NamedTuple):
    """Per-object slice of the configuration vector z."""
    position: np.ndarray
    theta: float
    gamma: float
    d: np.ndarray


class ContactAssignment(NamedTuple):
    object_index: int
    edge: int
    jaw: str
    contact_index: int


def rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _check_jaw(jaw: str) -> None:
    if jaw not in JAWS:
        raise GeometryError(f"Unknown jaw '{jaw}', expected one of {JAWS}")


class Polygon:
    """
    Simple polygon with an explicit origin for wrench and length measurements.

    Vertices are an (n, 2) array; edge e runs from vertex e to vertex e+1
    (mod n). Rigid transforms keep the per-edge inward side so contact normals
    stay consistent in every frame.
    """

    def __init__(
        self,
        vertices: Sequence[Sequence[float]],
        origin: Sequence[float] = (0.0, 0.0),
        name: str = "",
        _inward: Optional[np.ndarray] = None,
    ):
        self.vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        self.origin = np.asarray(origin, dtype=float).reshape(2)
        self.name = name
        self._inward = _inward
        self._shape: Optional[ShapelyPolygon] = None

    def __repr__(self) -> str:
        return f"Polygon(name={self.name!r}, n={len(self.vertices)})"

    @property
    def n_edges(self) -> int:
        return len(self.vertices)

    @property
    def shape(self) -> ShapelyPolygon:
        if self._shape is None:
            self._shape = ShapelyPolygon(self.vertices)
        return self._shape

    def edge(self, e: int) -> Tuple[np.ndarray, np.ndarray]:
        if not 0 <= e < self.n_edges:
            raise GeometryError(f"Edge index {e} out of range for polygon with {self.n_edges} edges")
        return self.vertices[e], self.vertices[(e + 1) % self.n_edges]

    def signed_area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    def is_ccw(self) -> bool:
        return self.signed_area() > 0

    def reversed(self) -> "Polygon":
        """Opposite winding. Edge e of self becomes edge (n - 2 - e) mod n."""
        return Polygon(self.vertices[::-1].copy(), self.origin.copy(), self.name)

    def transformed(self, rot: np.ndarray, shift: np.ndarray) -> "Polygon":
        """Apply x -> rot @ x + shift to vertices and origin."""
        shift = np.asarray(shift, dtype=float)
        return Polygon(
            self.vertices @ rot.T + shift,
            rot @ self.origin + shift,
            self.name,
            _inward=self.inward_sides(),
        )

    def translated(self, dx: float, dy: float = 0.0) -> "Polygon":
        return self.transformed(np.eye(2), np.array([dx, dy]))

    def inward_sides(self) -> np.ndarray:
        """Per edge, +1 if the material lies left of the edge direction, -1 if right."""
        if self._inward is None:
            self._inward = self._compute_inward_sides()
        return self._inward

    def _compute_inward_sides(self) -> np.ndarray:
        fallback = 1.0 if self.is_ccw() else -1.0
        shape = self.shape
        scale = float(np.ptp(self.vertices, axis=0).max()) or 1.0
        sides = np.full(self.n_edges, fallback)
        for e in range(self.n_edges):
            a, b = self.vertices[e], self.vertices[(e + 1) % self.n_edges]
            length = float(np.hypot(*(b - a)))
            if length == 0.0:
                continue
            t = (b - a) / length
            left = np.array([-t[1], t[0]])
            eps = 1e-6 * min(scale, length)
            mid = 0.5 * (a + b)
            if shape.contains(Point(*(mid + eps * left))):
                sides[e] = 1.0
            elif shape.contains(Point(*(mid - eps * left))):
                sides[e] = -1.0
        return sides


def validate_polygon(polygon: Polygon) -> None:
    """Raise GeometryError unless the polygon has >= 3 vertices, is simple and has area."""
    if len(polygon.vertices) < 3:
        raise GeometryError(f"Polygon {polygon.name!r} needs at least 3 vertices")
    if not np.all(np.isfinite(polygon.vertices)):
        raise GeometryError(f"Polygon {polygon.name!r} has non-finite vertices")
    shape = polygon.shape
    if not shape.is_valid or not shape.exterior.is_simple:
        raise GeometryError(f"Polygon {polygon.name!r} is not simple: {explain_validity(shape)}")
    if abs(polygon.signed_area()) <= 1e-14:
        raise GeometryError(f"Polygon {polygon.name!r} has zero area")
    edges = np.roll(polygon.vertices, -1, axis=0) - polygon.vertices
    if np.any(np.hypot(edges[:, 0], edges[:, 1]) == 0.0):
        raise GeometryError(f"Polygon {polygon.name!r} has a zero-length edge")


def world_transform(pose: Optional[Pose2D]) -> Tuple[np.ndarray, np.ndarray]:
    if pose is None:
        return np.eye(2), np.zeros(2)
    return rotation(pose.phi), np.array([pose.x, pose.y], dtype=float)


def gripper_transform(z_k: GraspConfig, jaw: str) -> Tuple[np.ndarray, np.ndarray]:
    """(rot, shift) mapping world points into jaw frame `jaw` of one grasp."""
    _check_jaw(jaw)
    rot = rotation(-float(z_k.theta))
    shift = -rot @ np.asarray(z_k.position, dtype=float)
    if jaw == "R":
        shift = shift - np.array([float(z_k.gamma), 0.0])
    return rot, shift


def to_gripper_frame(
    polygon: Polygon,
    pose_world: Optional[Pose2D],
    z_k: GraspConfig,
    jaw: str,
) -> Polygon:
    """Express a model-frame polygon in jaw frame G_L or G_R of grasp z_k."""
    rot_w, shift_w = world_transform(pose_world)
    rot_g, shift_g = gripper_transform(z_k, jaw)
    return polygon.transformed(rot_g @ rot_w, rot_g @ shift_w + shift_g)


def edge_contact(polygon: Polygon, e: int, d: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Point, unit tangent and unit inward normal at coordinate d on edge e, in the polygon's own frame."""
    if not 0.0 <= d <= 1.0:
        raise GeometryError(f"Edge coordinate d={d} outside [0, 1]")
    a, b = polygon.edge(e)
    delta = b - a
    length = float(np.hypot(*delta))
    if length <= 1e-12:
        raise GeometryError(f"Edge {e} of polygon {polygon.name!r} is degenerate")
    t = delta / length
    n = polygon.inward_sides()[e] * np.array([-t[1], t[0]])
    p = (1.0 - d) * a + d * b
    return p, t, n


def contact_geometry(
    polygon: Polygon,
    e: int,
    d: float,
    z_k: Optional[GraspConfig] = None,
    jaw: str = "L",
    pose_world: Optional[Pose2D] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Contact point, unit tangent and unit inward normal expressed in jaw frame `jaw`.

    With z_k omitted the result is in the polygon's (posed) frame.
    """
    _check_jaw(jaw)
    rot, shift = world_transform(pose_world)
    if z_k is not None:
        rot_g, shift_g = gripper_transform(z_k, jaw)
        rot, shift = rot_g @ rot, rot_g @ shift + shift_g
    p, t, n = edge_contact(polygon, e, d)
    return rot @ p + shift, rot @ t, rot @ n


def characteristic_length(polygon: Polygon, contact_edges: Iterable[int]) -> float:
    """
    Mean distance from the object origin to both endpoints of every contacted edge.

    Each contacted edge contributes its two endpoints once, so a vertex shared
    by two contacted edges is counted twice.
    """
    edges = list(dict.fromkeys(int(e) for e in contact_edges))
    if not edges:
        raise GeometryError(f"Polygon {polygon.name!r} has no contacts")
    distances = []
    for e in edges:
        a, b = polygon.edge(e)
        distances.append(np.hypot(*(a - polygon.origin)))
        distances.append(np.hypot(*(b - polygon.origin)))
    return float(np.mean(distances))


def cross_section(polygon: Polygon, heights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Least and greatest x of the closed polygon at each height.

    Heights that miss the polygon give (+inf, -inf).
    """
    heights = np.asarray(heights, dtype=float).reshape(-1, 1)
    a = polygon.vertices
    b = np.roll(a, -1, axis=0)
    ya, yb = a[:, 1], b[:, 1]
    hit = (heights >= np.minimum(ya, yb)) & (heights <= np.maximum(ya, yb))
    dy = yb - ya
    flat = dy == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.clip((heights - ya) / np.where(flat, 1.0, dy), 0.0, 1.0)
    x = a[:, 0] + s * (b[:, 0] - a[:, 0])
    x_lo = np.where(flat, np.minimum(a[:, 0], b[:, 0]), x)
    x_hi = np.where(flat, np.maximum(a[:, 0], b[:, 0]), x)
    x_min = np.where(hit, x_lo, np.inf).min(axis=1)
    x_max = np.where(hit, x_hi, -np.inf).max(axis=1)
    return x_min, x_max


def sweep_bounds(
    left_shapes: Sequence[Polygon],
    right_shapes: Sequence[Polygon],
    y: np.ndarray,
    obstacles: Sequence[Tuple[Polygon, Polygon]] = (),
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sweep envelopes of horizontal jaw closing.

    Args:
        left_shapes: Objects expressed in their G_L frames
        right_shapes: Objects expressed in their G_R frames
        y: Strictly increasing grid heights
        obstacles: (G_L, G_R) pairs of obstacle polygons

    Returns:
        (b_U, b_L): the left surface must stay at or left of b_U, the right at or right of b_L
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or (len(y) > 1 and np.any(np.diff(y) <= 0)):
        raise GeometryError("Grid heights must be strictly increasing")
    b_upper = np.full(len(y), np.inf)
    b_lower = np.full(len(y), -np.inf)
    lefts = list(left_shapes) + [pair[0] for pair in obstacles]
    rights = list(right_shapes) + [pair[1] for pair in obstacles]
    for shape in lefts:
        b_upper = np.minimum(b_upper, cross_section(shape, y)[0])
    for shape in rights:
        b_lower = np.maximum(b_lower, cross_section(shape, y)[1])
    return b_upper, b_lower


def signed_distance(point: Sequence[float], polygon: Polygon) -> float:
    """Negative inside, positive outside, zero on the boundary."""
    pt = Point(float(point[0]), float(point[1]))
    shape = polygon.shape
    distance = float(shape.exterior.distance(pt))
    if distance == 0.0:
        return 0.0
    return -distance if shape.contains(pt) else distance


def theta_bounds(
    polygon: Polygon,
    contacts: Sequence[ContactAssignment],
    mu: float,
    pose_world: Optional[Pose2D] = None,
    step_deg: float = 1.0,
    resolution_deg: float = 0.1,
) -> Tuple[float, float]:
    """
    Admissible grasp-orientation interval (radians) for one object.

    A seed orientation is searched over a full turn in step_deg increments
    (0, +1, -1, +2, ...). From the seed the interval is widened in each
    direction until the unit-preload squeeze program becomes infeasible or a
    contact tangent turns horizontal, then the boundary is bisected to
    resolution_deg.
    """
    from core.stability import squeeze_feasible

    contacts = list(contacts)
    d = np.full(max(c.contact_index for c in contacts) + 1, 0.5)
    step = math.radians(step_deg)
    resolution = math.radians(resolution_deg)
    rot_w, shift_w = world_transform(pose_world)
    world_polygon = polygon.transformed(rot_w, shift_w)

    def tangent_signs(theta: float) -> Optional[np.ndarray]:
        rot = rotation(-theta)
        signs = []
        for contact in contacts:
            _, t, _ = edge_contact(world_polygon, contact.edge, 0.5)
            t_y = (rot @ t)[1]
            if abs(t_y) < HORIZONTAL_TANGENT_EPS:
                return None
            signs.append(np.sign(t_y))
        return np.array(signs)

    def admissible(theta: float, reference: Optional[np.ndarray]) -> bool:
        signs = tangent_signs(theta)
        if signs is None or (reference is not None and not np.array_equal(signs, reference)):
            return False
        z_k = GraspConfig(np.zeros(2), theta, 0.0, d)
        left = world_polygon.transformed(*gripper_transform(z_k, "L"))
        return squeeze_feasible(left, contacts, d, mu)

    seed = None
    for k in range(int(round(360.0 / step_deg))):
        offset = (k + 1) // 2 * step * (1 if k % 2 == 1 else -1)
        if admissible(offset, None):
            seed = offset
            break
    if seed is None:
        raise ThetaBoundsError(
            f"No orientation of {polygon.name!r} admits a squeeze grasp with this contact assignment"
        )
    reference = tangent_signs(seed)

    def widen(direction: int) -> float:
        good = seed
        while abs(good + direction * step - seed) <= math.pi + 1e-12:
            trial = good + direction * step
            if not admissible(trial, reference):
                bad = trial
                while abs(bad - good) > resolution:
                    mid = 0.5 * (good + bad)
                    if admissible(mid, reference):
                        good = mid
                    else:
                        bad = mid
                return good
            good = trial
        return good

    low, high = widen(-1), widen(+1)
    logger.debug(
        f"theta bounds for {polygon.name!r}: [{math.degrees(low):.2f}, {math.degrees(high):.2f}] deg"
    )
    return low, high
