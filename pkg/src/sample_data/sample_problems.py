"""
Reference grasp problems for testing and demonstration.
"""

from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core.geometry import ContactAssignment, GraspConfig, Polygon, Pose2D
from core.problem import GraspObject, GraspProblem
from utils.config import OptimizationParams


def _box(width: float, height: float) -> List[Tuple[float, float]]:
    """Counter-clockwise rectangle centred on the origin; edge 1 faces +x, edge 3 faces -x."""
    w, h = 0.5 * width, 0.5 * height
    return [(-w, -h), (w, -h), (w, h), (-w, h)]


# Left jaw touches the -x side (edge 3), right jaw the +x side (edge 1).
SQUEEZE = [(3, "L"), (1, "R")]

SAMPLE_PROBLEMS: Dict[str, Dict[str, Any]] = {
    "square": {
        "title": "Centred square",
        "description": "One 2x2 square squeezed on opposite sides; the grasp-quality reference case.",
        "objects": [
            {"name": "square", "vertices": _box(2.0, 2.0), "pose": (0.0, 0.0, 0.0), "contacts": SQUEEZE},
        ],
    },
    "two_rectangles": {
        "title": "Two rectangles",
        "description": "Two rectangles of different widths, one contact per jaw each.",
        "objects": [
            {"name": "wide", "vertices": _box(1.0, 0.5), "pose": (0.0, 0.0, 0.0), "contacts": SQUEEZE},
            {"name": "narrow", "vertices": _box(0.6, 0.3), "pose": (3.0, 0.0, 0.0), "contacts": SQUEEZE},
        ],
    },
    "repair_pair": {
        "title": "Square and small block",
        "description": "A unit square and a small block whose grasps can bury contacts in each other.",
        "objects": [
            {"name": "block_a", "vertices": _box(1.0, 1.0), "pose": (0.0, 0.0, 0.0), "contacts": SQUEEZE},
            {"name": "block_b", "vertices": _box(0.4, 0.2), "pose": (0.0, 0.0, 0.0), "contacts": SQUEEZE},
        ],
    },
    "fenced_square": {
        "title": "Square with an attached obstacle",
        "description": "A square carrying a fixed obstacle above it that the jaws must clear.",
        "objects": [
            {
                "name": "square", "vertices": _box(1.0, 1.0), "pose": (0.0, 0.0, 0.0), "contacts": SQUEEZE,
                "obstacles": [[(-0.3, 0.7), (0.3, 0.7), (0.3, 0.9), (-0.3, 0.9)]],
            },
        ],
    },
}

# Configurations of "repair_pair" with one buried contact (block_b left contact inside block_a).
REPAIR_SCENES: Dict[str, List[Tuple[Tuple[float, float], float, float]]] = {
    "shallow": [((0.0, 0.0), 0.0, 0.0), ((0.299, -0.45), 0.0, -0.7)],
    "deep": [((0.0, 0.0), 0.0, 0.0), ((0.0, 0.0), 0.0, -0.8)],
}


def build_problem(data: Dict[str, Any], params: Optional[OptimizationParams] = None, name: str = "problem") -> GraspProblem:
    objects = []
    for k, entry in enumerate(data["objects"]):
        polygon = Polygon(entry["vertices"], (0.0, 0.0), entry["name"])
        contacts = [ContactAssignment(k, edge, jaw, i) for i, (edge, jaw) in enumerate(entry["contacts"])]
        obstacles = [Polygon(v, name=f"{entry['name']}:obstacle{i}") for i, v in enumerate(entry.get("obstacles", []))]
        objects.append(GraspObject(polygon, contacts, Pose2D(*entry["pose"]), obstacles))
    return GraspProblem(objects, params, name)


def get_sample_problem(key: str, params: Optional[OptimizationParams] = None) -> Optional[GraspProblem]:
    """Build a sample problem by key, or None when the key is unknown."""
    data = SAMPLE_PROBLEMS.get(key)
    if data is None:
        return None
    return build_problem(data, params, key)


def get_repair_scene(depth: str, params: Optional[OptimizationParams] = None) -> Tuple[GraspProblem, np.ndarray]:
    """The "repair_pair" problem with a configuration that buries one contact."""
    problem = get_sample_problem("repair_pair", params)
    configs = [
        GraspConfig(np.array(position), theta, gamma, np.full(obj.n_contacts, 0.5))
        for obj, (position, theta, gamma) in zip(problem.objects, REPAIR_SCENES[depth])
    ]
    return problem, problem.layout.join(configs)


def get_all_sample_keys() -> list:
    """Get all available sample keys."""
    return list(SAMPLE_PROBLEMS.keys())
