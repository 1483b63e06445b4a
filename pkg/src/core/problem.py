"""
Problem container and configuration-vector layout.

A GraspProblem holds the object set in world coordinates together with the
parameters of one run. The configuration vector z is laid out object by
object as [p_x, p_y, theta, gamma, d_0, ..., d_{Nc-1}].
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.geometry import (
    ContactAssignment,
    GraspConfig,
    Polygon,
    Pose2D,
    characteristic_length,
    gripper_transform,
    theta_bounds,
    world_transform,
)
from utils.config import OptimizationParams, default_parameters
from utils.errors import GeometryError

logger = logging.getLogger(__name__)

POSE_SLOTS = 4


class GraspObject:
    """One object to be grasped: model polygon, world pose, contacts and attached obstacles."""

    def __init__(
        self,
        polygon: Polygon,
        contacts: Sequence[ContactAssignment],
        pose: Pose2D = Pose2D(),
        obstacles: Sequence[Polygon] = (),
    ):
        self.polygon = polygon
        self.pose = pose
        self.contacts = sorted(contacts, key=lambda c: c.contact_index)
        self.obstacles = list(obstacles)

        if not self.contacts:
            raise GeometryError(f"Object {polygon.name!r} has no contacts")
        if [c.contact_index for c in self.contacts] != list(range(len(self.contacts))):
            raise GeometryError(f"Contact indices of {polygon.name!r} must be 0..{len(self.contacts) - 1}")

        rot, shift = world_transform(pose)
        self.world_polygon = polygon.transformed(rot, shift)
        self.world_obstacles = [o.transformed(rot, shift) for o in self.obstacles]

    @property
    def name(self) -> str:
        return self.polygon.name

    @property
    def n_contacts(self) -> int:
        return len(self.contacts)

    @property
    def world_origin(self) -> np.ndarray:
        return self.world_polygon.origin

    def jaw_contacts(self, jaw: str) -> List[ContactAssignment]:
        return [c for c in self.contacts if c.jaw == jaw]

    def characteristic_length(self) -> float:
        return characteristic_length(self.polygon, [c.edge for c in self.contacts])

    def in_gripper(self, z_k: GraspConfig) -> Tuple[Polygon, List[Polygon]]:
        """Object and obstacles in the left jaw frame of grasp z_k."""
        rot, shift = gripper_transform(z_k, "L")
        return (
            self.world_polygon.transformed(rot, shift),
            [o.transformed(rot, shift) for o in self.world_obstacles],
        )


class ConfigLayout:
    """Index bookkeeping for the configuration vector z."""

    def __init__(self, contact_counts: Sequence[int]):
        self.contact_counts = [int(n) for n in contact_counts]
        self.offsets = np.concatenate([[0], np.cumsum([POSE_SLOTS + n for n in self.contact_counts])]).astype(int)

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_objects(self) -> int:
        return len(self.contact_counts)

    def block(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k + 1])

    def split(self, z: np.ndarray) -> List[GraspConfig]:
        z = np.asarray(z, dtype=float)
        configs = []
        for k in range(self.n_objects):
            block = z[self.block(k)]
            configs.append(GraspConfig(block[0:2].copy(), float(block[2]), float(block[3]), block[POSE_SLOTS:].copy()))
        return configs

    def join(self, configs: Sequence[GraspConfig]) -> np.ndarray:
        parts = []
        for config in configs:
            parts.append(np.concatenate([np.asarray(config.position, float), [config.theta, config.gamma], np.asarray(config.d, float)]))
        return np.concatenate(parts)


class GraspProblem:
    """Object set, contacts, obstacles and parameters of one co-design run."""

    def __init__(
        self,
        objects: Sequence[GraspObject],
        params: Optional[OptimizationParams] = None,
        name: str = "problem",
        theta_overrides: Optional[Dict[int, Tuple[float, float]]] = None,
    ):
        if not objects:
            raise GeometryError("A problem needs at least one object")
        self.objects = list(objects)
        self.params = params or default_parameters()
        self.name = name
        self.theta_overrides = dict(theta_overrides or {})
        self.layout = ConfigLayout([o.n_contacts for o in self.objects])
        self._lengths: Optional[np.ndarray] = None
        self._theta_bounds: Optional[List[Tuple[float, float]]] = None

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    def with_params(self, params: OptimizationParams) -> "GraspProblem":
        problem = GraspProblem(self.objects, params, self.name, self.theta_overrides)
        problem._lengths = self._lengths
        if params.mu == self.params.mu:
            problem._theta_bounds = self._theta_bounds
        return problem

    def characteristic_lengths(self) -> np.ndarray:
        if self._lengths is None:
            self._lengths = np.array([o.characteristic_length() for o in self.objects])
        return self._lengths

    def theta_bounds(self) -> List[Tuple[float, float]]:
        if self._theta_bounds is None:
            self._theta_bounds = [
                self.theta_overrides[k] if k in self.theta_overrides
                else theta_bounds(o.world_polygon, o.contacts, self.params.mu)
                for k, o in enumerate(self.objects)
            ]
            for obj, (low, high) in zip(self.objects, self._theta_bounds):
                logger.info(f"📐 {obj.name}: theta in [{math.degrees(low):.1f}, {math.degrees(high):.1f}] deg")
        return self._theta_bounds

    def config_bounds(self) -> List[Tuple[float, float]]:
        """Box Z for the outer search, in z layout order."""
        params = self.params
        bounds: List[Tuple[float, float]] = []
        for obj, (t_low, t_high) in zip(self.objects, self.theta_bounds()):
            ox, oy = obj.world_origin
            hx, hy = params.position_bounds
            bounds += [(ox - hx, ox + hx), (oy - hy, oy + hy), (t_low, t_high), tuple(params.gamma_bounds)]
            bounds += [tuple(params.d_bounds)] * obj.n_contacts
        return bounds

    def initial_config(self, rng: np.random.Generator) -> np.ndarray:
        """Vertical gripper positions uniform in their bounds; everything else at bound midpoints, d at 0.5."""
        bounds = self.config_bounds()
        z = np.array([0.5 * (low + high) for low, high in bounds])
        for k, obj in enumerate(self.objects):
            start = self.layout.offsets[k]
            low, high = bounds[start + 1]
            z[start + 1] = rng.uniform(low, high)
            z[start + POSE_SLOTS:start + POSE_SLOTS + obj.n_contacts] = np.clip(0.5, *self.params.d_bounds)
        return z
