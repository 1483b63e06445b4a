"""
SVG rendering of solution files.

Three views are produced from a SolutionFile alone:
  gripper_frames  objects, obstacles and contacts in G_L and G_R with the jaw surface of that frame
  grasp           one document per object in the world frame with both jaw surfaces posed by z
  sweep           all shapes in G_L/G_R with the sweep envelopes b_U and b_L overlaid
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    from reportlab.graphics import renderSVG
    from reportlab.graphics.shapes import Circle, Drawing, PolyLine, Polygon as DrawingPolygon, String
    from reportlab.lib import colors
    REPORTLAB_AVAILABLE = True
except ImportError:
    REPORTLAB_AVAILABLE = False

from core.geometry import rotation, sweep_bounds
from core.shape import SurfaceParams, grasp_geometry, hermite_position
from utils.errors import RenderError
from utils.problem_io import SolutionFile

logger = logging.getLogger(__name__)

RENDER_MODES = ("gripper_frames", "grasp", "sweep")
SAMPLES_PER_INTERVAL = 8
MARGIN = 20.0

# Left jaw red, right jaw orange, envelopes magenta, obstacles gray.
STYLE = {
    "L": {"stroke": "#d62728", "width": 2.0},
    "R": {"stroke": "#ff7f0e", "width": 2.0},
    "object": {"stroke": "#1f3b73", "fill": "#c6d4ef", "width": 1.0},
    "obstacle": {"stroke": "#555555", "fill": "#bbbbbb", "width": 1.0},
    "envelope": {"stroke": "#e377c2", "width": 1.5},
}


class Viewport:
    """Maps model coordinates onto a drawing with a fixed margin."""

    def __init__(self, points: np.ndarray, scale: float):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        self.low = points.min(axis=0)
        self.high = points.max(axis=0)
        self.scale = float(scale)
        self.width = self.scale * float(self.high[0] - self.low[0]) + 2 * MARGIN
        self.height = self.scale * float(self.high[1] - self.low[1]) + 2 * MARGIN

    def map(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        return self.scale * (points - self.low) + MARGIN

    def flat(self, points: np.ndarray) -> List[float]:
        return [float(v) for v in self.map(points).reshape(-1)]

    def drawing(self) -> "Drawing":
        return Drawing(self.width, self.height)


def _require_reportlab() -> None:
    if not REPORTLAB_AVAILABLE:
        raise RenderError("ReportLab not available. Install with: pip install reportlab")


def surface_curve(surface: SurfaceParams, jaw: str, samples: int = SAMPLES_PER_INTERVAL) -> np.ndarray:
    """Dense (x, y) samples of one jaw surface in its own frame."""
    y = np.concatenate([
        np.linspace(surface.y[i], surface.y[i + 1], samples, endpoint=False) for i in range(surface.n_intervals)
    ] + [surface.y[-1:]])
    return np.column_stack([hermite_position(surface, jaw, y), y])


def _surface(solution: SolutionFile) -> Optional[SurfaceParams]:
    record = solution.surface()
    if record is None:
        return None
    return SurfaceParams(record.y, record.V, record.M)


def sweep_envelopes(solution: SolutionFile) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Breakpoints of the drawn surface with b_U and b_L recomputed from the stored configuration."""
    problem = solution.to_problem()
    geometry = grasp_geometry(solution.z(), problem)
    record = solution.surface()
    y = np.asarray(record.y if record is not None else np.linspace(*solution.params.grid_span, solution.params.n_y + 1))
    b_upper, b_lower = sweep_bounds(geometry["left_shapes"], geometry["right_shapes"], y, geometry["obstacles"])
    return y, b_upper, b_lower


def _finite_runs(x: np.ndarray, y: np.ndarray) -> List[np.ndarray]:
    """Consecutive finite samples as separate (x, y) polylines."""
    runs, current = [], []
    for xi, yi in zip(x, y):
        if np.isfinite(xi):
            current.append((xi, yi))
        elif current:
            runs.append(np.array(current))
            current = []
    if current:
        runs.append(np.array(current))
    return [run for run in runs if len(run) >= 2]


def _add_polygon(drawing, view: Viewport, vertices: np.ndarray, style: Dict) -> None:
    drawing.add(DrawingPolygon(view.flat(vertices), strokeColor=colors.HexColor(style["stroke"]),
                               fillColor=colors.HexColor(style["fill"]), strokeWidth=style["width"]))


def _add_polyline(drawing, view: Viewport, points: np.ndarray, style: Dict) -> None:
    drawing.add(PolyLine(view.flat(points), strokeColor=colors.HexColor(style["stroke"]),
                         strokeWidth=style["width"]))


def _add_contact(drawing, view: Viewport, point: Sequence[float], jaw: str) -> None:
    cx, cy = view.map(np.asarray(point))[0]
    color = colors.HexColor(STYLE[jaw]["stroke"])
    drawing.add(Circle(float(cx), float(cy), 3.0, fillColor=color, strokeColor=color))


def _gripper_frame_drawings(solution: SolutionFile) -> Dict[str, "Drawing"]:
    problem = solution.to_problem()
    geometry = grasp_geometry(solution.z(), problem)
    surface = _surface(solution)
    scale = solution.params.display_scale
    drawings = {}
    for side, jaw in enumerate(("L", "R")):
        shapes = geometry["left_shapes"] if jaw == "L" else geometry["right_shapes"]
        obstacles = [pair[side] for pair in geometry["obstacles"]]
        curve = surface_curve(surface, jaw) if surface is not None else np.zeros((0, 2))
        points = np.vstack([s.vertices for s in shapes + obstacles] + [curve])
        view = Viewport(points, scale)
        drawing = view.drawing()
        for obstacle in obstacles:
            _add_polygon(drawing, view, obstacle.vertices, STYLE["obstacle"])
        for shape in shapes:
            _add_polygon(drawing, view, shape.vertices, STYLE["object"])
        if len(curve):
            _add_polyline(drawing, view, curve, STYLE[jaw])
        for contact in geometry["contacts"]:
            if contact["jaw"] == jaw:
                _add_contact(drawing, view, contact["point"], jaw)
        drawing.add(String(MARGIN, view.height - MARGIN / 2, f"{solution.header.name} G_{jaw}", fontSize=8))
        drawings[f"gripper_frame_{jaw}"] = drawing
    return drawings


def _grasp_drawings(solution: SolutionFile) -> Dict[str, "Drawing"]:
    problem = solution.to_problem()
    surface = _surface(solution)
    scale = solution.params.display_scale
    drawings = {}
    for obj, z_k in zip(problem.objects, problem.layout.split(solution.z())):
        rot = rotation(z_k.theta)
        curves = {}
        if surface is not None:
            for jaw in ("L", "R"):
                local = surface_curve(surface, jaw)
                if jaw == "R":
                    local = local + np.array([z_k.gamma, 0.0])
                curves[jaw] = local @ rot.T + z_k.position
        points = np.vstack([obj.world_polygon.vertices] + [o.vertices for o in obj.world_obstacles] + list(curves.values()))
        view = Viewport(points, scale)
        drawing = view.drawing()
        for obstacle in obj.world_obstacles:
            _add_polygon(drawing, view, obstacle.vertices, STYLE["obstacle"])
        _add_polygon(drawing, view, obj.world_polygon.vertices, STYLE["object"])
        for jaw, curve in curves.items():
            _add_polyline(drawing, view, curve, STYLE[jaw])
        drawings[f"grasp_{obj.name}"] = drawing
    return drawings


def _sweep_drawings(solution: SolutionFile) -> Dict[str, "Drawing"]:
    problem = solution.to_problem()
    geometry = grasp_geometry(solution.z(), problem)
    surface = _surface(solution)
    y, b_upper, b_lower = sweep_envelopes(solution)

    upper_runs = _finite_runs(b_upper, y)
    lower_runs = _finite_runs(b_lower, y)
    shapes = geometry["left_shapes"] + geometry["right_shapes"] + [o for pair in geometry["obstacles"] for o in pair]
    curves = [surface_curve(surface, jaw) for jaw in ("L", "R")] if surface is not None else []
    points = np.vstack([s.vertices for s in shapes] + curves + upper_runs + lower_runs)
    view = Viewport(points, solution.params.display_scale)
    drawing = view.drawing()
    for pair in geometry["obstacles"]:
        for obstacle in pair:
            _add_polygon(drawing, view, obstacle.vertices, STYLE["obstacle"])
    for shape in geometry["left_shapes"] + geometry["right_shapes"]:
        _add_polygon(drawing, view, shape.vertices, STYLE["object"])
    for run in upper_runs + lower_runs:
        _add_polyline(drawing, view, run, STYLE["envelope"])
    for jaw, curve in zip(("L", "R"), curves):
        _add_polyline(drawing, view, curve, STYLE[jaw])
    return {"sweep": drawing}


def build_drawings(solution: SolutionFile, mode: str) -> Dict[str, "Drawing"]:
    """
    Drawings for one render mode, keyed by document name.

    Raises:
        RenderError: unknown mode or reportlab missing
    """
    _require_reportlab()
    builders = {
        "gripper_frames": _gripper_frame_drawings,
        "grasp": _grasp_drawings,
        "sweep": _sweep_drawings,
    }
    if mode not in builders:
        raise RenderError(f"Unknown render mode '{mode}'. Available: {list(RENDER_MODES)}")
    return builders[mode](solution)


def render(solution: SolutionFile, mode: str) -> Dict[str, str]:
    """SVG documents for a render mode, keyed by document name."""
    drawings = build_drawings(solution, mode)
    documents = {name: renderSVG.drawToString(drawing) for name, drawing in drawings.items()}
    logger.info(f"🖼️ Rendered {len(documents)} {mode} document(s)")
    return documents
