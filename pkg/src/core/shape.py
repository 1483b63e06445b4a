"""
Jaw surface representation and the gripper shape program.

Each jaw surface is a horizontal position x = f(y) given by piecewise cubic
Hermite interpolation of positions V and slopes M on a shared breakpoint grid.
The shape variables are u_S = [v_L, v_R, m_L, m_R], each of length N_y + 1.
"""

import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple, TypedDict

import numpy as np
import scipy.sparse as sp

from core.geometry import HORIZONTAL_TANGENT_EPS, GraspConfig, Polygon, edge_contact, sweep_bounds
from core.problem import GraspProblem
from core.qp import INFEASIBLE, OPTIMAL, QPInstance, QPResult, QPSolver, get_qp_solver
from utils.errors import GeometryError, StructuralFailure

logger = logging.getLogger(__name__)

JAW_OFFSET = {"L": 0, "R": 1}


class SurfaceParams:
    """Breakpoint grid with positions and slopes of both jaw surfaces."""

    def __init__(self, y: Sequence[float], V: Sequence[float], M: Sequence[float]):
        self.y = np.asarray(y, dtype=float)
        self.V = np.asarray(V, dtype=float)
        self.M = np.asarray(M, dtype=float)
        count = len(self.y)
        if count < 2 or np.any(np.diff(self.y) <= 0):
            raise GeometryError("Surface grid must be strictly increasing with at least two points")
        if len(self.V) != 2 * count or len(self.M) != 2 * count:
            raise GeometryError(f"V and M need {2 * count} values for a grid of {count} points")

    @classmethod
    def from_vector(cls, y: np.ndarray, u_s: np.ndarray) -> "SurfaceParams":
        count = len(y)
        return cls(y, u_s[:2 * count], u_s[2 * count:4 * count])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.V, self.M])

    @property
    def n_intervals(self) -> int:
        return len(self.y) - 1

    def jaw(self, jaw: str) -> Tuple[np.ndarray, np.ndarray]:
        if jaw not in JAW_OFFSET:
            raise GeometryError(f"Unknown jaw '{jaw}'")
        count = len(self.y)
        offset = JAW_OFFSET[jaw] * count
        return self.V[offset:offset + count], self.M[offset:offset + count]

    def translated(self, dx: float) -> "SurfaceParams":
        return SurfaceParams(self.y, self.V + dx, self.M)


def hermite_basis(l: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    l2, l3 = l * l, l * l * l
    return 2 * l3 - 3 * l2 + 1, -2 * l3 + 3 * l2, l3 - 2 * l2 + l, l3 - l2


def hermite_basis_slope(l: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """d/dl of the Hermite basis."""
    l2 = l * l
    return 6 * l2 - 6 * l, -6 * l2 + 6 * l, 3 * l2 - 4 * l + 1, 3 * l2 - 2 * l


def locate_interval(y: np.ndarray, y_query) -> Tuple[np.ndarray, np.ndarray]:
    """
    Interval index i with y[i] < y_query <= y[i+1] (y[0] maps to interval 0) and local coordinate l.

    Raises:
        StructuralFailure: when a query lies outside [y[0], y[-1]]
    """
    y = np.asarray(y, dtype=float)
    query = np.atleast_1d(np.asarray(y_query, dtype=float))
    outside = np.maximum(y[0] - query, query - y[-1])
    if np.any(outside > 0):
        raise StructuralFailure(
            f"Height {query[np.argmax(outside)]:.6g} outside grid span [{y[0]:.6g}, {y[-1]:.6g}]",
            violation=float(outside.max()),
        )
    index = np.clip(np.searchsorted(y, query, side="left") - 1, 0, len(y) - 2)
    l = (query - y[index]) / (y[index + 1] - y[index])
    return index, l


def hermite_position(surface: SurfaceParams, jaw: str, y_query):
    """Surface x at the query heights (scalar in, scalar out)."""
    v, m = surface.jaw(jaw)
    index, l = locate_interval(surface.y, y_query)
    dy = surface.y[index + 1] - surface.y[index]
    h00, h01, h10, h11 = hermite_basis(l)
    x = h00 * v[index] + h01 * v[index + 1] + dy * (h10 * m[index] + h11 * m[index + 1])
    return float(x[0]) if np.ndim(y_query) == 0 else x


def hermite_slope(surface: SurfaceParams, jaw: str, y_query):
    """Surface dx/dy at the query heights."""
    v, m = surface.jaw(jaw)
    index, l = locate_interval(surface.y, y_query)
    dy = surface.y[index + 1] - surface.y[index]
    l2 = l * l
    slope = (6 * l2 - 6 * l) * (v[index] - v[index + 1]) / dy + (3 * l2 - 4 * l + 1) * m[index] + (3 * l2 - 2 * l) * m[index + 1]
    return float(slope[0]) if np.ndim(y_query) == 0 else slope


def second_derivatives(surface: SurfaceParams, i_y: int, jaw: str) -> Tuple[float, float]:
    """d2x/dy2 at the start and end of interval i_y."""
    v, m = surface.jaw(jaw)
    dy = surface.y[i_y + 1] - surface.y[i_y]
    f_t0 = 6 * (v[i_y + 1] - v[i_y]) / dy ** 2 - 2 * (2 * m[i_y] + m[i_y + 1]) / dy
    f_t1 = 6 * (v[i_y] - v[i_y + 1]) / dy ** 2 + 2 * (m[i_y] + 2 * m[i_y + 1]) / dy
    return float(f_t0), float(f_t1)


class ShapeIndex:
    """Column positions of v and m entries in u_S."""

    def __init__(self, n_points: int):
        self.n_points = n_points

    @property
    def size(self) -> int:
        return 4 * self.n_points

    def v(self, jaw: str, i: int) -> int:
        return JAW_OFFSET[jaw] * self.n_points + i

    def m(self, jaw: str, i: int) -> int:
        return (2 + JAW_OFFSET[jaw]) * self.n_points + i


class GraspGeometry(TypedDict):
    """Everything the shape program needs from z, in jaw frames."""
    left_shapes: List[Polygon]
    right_shapes: List[Polygon]
    obstacles: List[Tuple[Polygon, Polygon]]
    contacts: List[Dict[str, Any]]
    gammas: List[float]


def grasp_geometry(z: np.ndarray, problem: GraspProblem) -> GraspGeometry:
    """Objects, obstacles and contacts of every grasp expressed in G_L / G_R."""
    left_shapes, right_shapes, obstacles, contacts, gammas = [], [], [], [], []
    for k, (obj, z_k) in enumerate(zip(problem.objects, problem.layout.split(z))):
        left, left_obstacles = obj.in_gripper(z_k)
        shift = np.array([-z_k.gamma, 0.0])
        left_shapes.append(left)
        right_shapes.append(left.translated(*shift))
        obstacles += [(o, o.translated(*shift)) for o in left_obstacles]
        gammas.append(float(z_k.gamma))
        for contact in obj.contacts:
            p, t, n = edge_contact(left, contact.edge, float(z_k.d[contact.contact_index]))
            if contact.jaw == "R":
                p = p + shift
            contacts.append({
                "object": k,
                "index": contact.contact_index,
                "jaw": contact.jaw,
                "point": p,
                "tangent": t,
                "normal": n,
            })
    return GraspGeometry(left_shapes=left_shapes, right_shapes=right_shapes, obstacles=obstacles,
                         contacts=contacts, gammas=gammas)


def uniform_grid(params) -> np.ndarray:
    low, high = params.grid_span
    return np.linspace(low, high, params.n_y + 1)


def scaled_weights(w_s: float, w_p: float, n_intervals: int, total_length: float) -> Tuple[float, float]:
    """Curvature and path weights normalised by grid resolution and object scale."""
    w_p_scaled = w_p * total_length ** 2 / n_intervals
    w_s_scaled = w_s * n_intervals ** 2 / total_length ** 2
    return w_p_scaled, w_s_scaled


def shape_cost_factor(
    grid: np.ndarray,
    contact_heights: Dict[str, Sequence[float]],
    w_s: float,
    w_p: float,
    sigma: float,
    total_length: float,
) -> np.ndarray:
    """Matrix F with J_S = ||F u_S||^2."""
    grid = np.asarray(grid, dtype=float)
    n_points = len(grid)
    n_intervals = n_points - 1
    index = ShapeIndex(n_points)
    w_p_scaled, w_s_scaled = scaled_weights(w_s, w_p, n_intervals, total_length)
    i = np.arange(n_intervals)
    dy = np.diff(grid)
    blocks = []
    for jaw in ("L", "R"):
        heights = np.asarray(contact_heights.get(jaw, ()), dtype=float)
        weights = np.exp(-(grid[:, None] - heights[None, :]) ** 2 / (2 * sigma ** 2)) if heights.size else np.zeros((n_points, 0))
        # second derivative at the start and end of every interval
        start = np.zeros((n_intervals, index.size))
        start[i, index.v(jaw, i + 1)] = 6 / dy ** 2
        start[i, index.v(jaw, i)] = -6 / dy ** 2
        start[i, index.m(jaw, i)] = -4 / dy
        start[i, index.m(jaw, i + 1)] = -2 / dy
        end = np.zeros((n_intervals, index.size))
        end[i, index.v(jaw, i)] = 6 / dy ** 2
        end[i, index.v(jaw, i + 1)] = -6 / dy ** 2
        end[i, index.m(jaw, i)] = 2 / dy
        end[i, index.m(jaw, i + 1)] = 4 / dy
        for c in range(weights.shape[1]):
            blocks.append(np.sqrt(w_p_scaled * weights[:-1, c])[:, None] * start)
            blocks.append(np.sqrt(w_p_scaled * weights[1:, c])[:, None] * end)
        path = np.zeros((n_intervals, index.size))
        path[i, index.v(jaw, i + 1)] = np.sqrt(w_s_scaled)
        path[i, index.v(jaw, i)] = -np.sqrt(w_s_scaled)
        blocks.append(path)
    return np.vstack(blocks)


def shape_cost(
    z: np.ndarray,
    problem: GraspProblem,
    grid: np.ndarray,
    geometry: Optional[GraspGeometry] = None,
) -> np.ndarray:
    """Q_S with 1/2 u_S' Q_S u_S equal to the regularity cost J_S."""
    params = problem.params
    geometry = geometry or grasp_geometry(z, problem)
    heights = {"L": [], "R": []}
    for contact in geometry["contacts"]:
        heights[contact["jaw"]].append(contact["point"][1])
    factor = shape_cost_factor(grid, heights, params.w_s, params.w_p, params.sigma,
                               float(problem.characteristic_lengths().sum()))
    factor = sp.csr_matrix(factor)
    return 2.0 * (factor.T @ factor).toarray()


class ShapeQP:
    """Shape program data plus the sweep bounds it was built from."""

    def __init__(self, grid, Q, A, b, H, g, b_upper, b_lower, contact_rows):
        self.grid = grid
        self.Q = Q
        self.A = A
        self.b = b
        self.H = H
        self.g = g
        self.b_upper = b_upper
        self.b_lower = b_lower
        self.contact_rows = contact_rows

    @property
    def n_vars(self) -> int:
        return self.Q.shape[0]

    def instance(self, drop_unbounded: bool = True) -> QPInstance:
        """QP instance; rows zeroed for unbounded heights are dropped when requested."""
        if not drop_unbounded:
            return QPInstance(self.Q, self.A, self.b, self.H, self.g)
        keep = np.any(self.A != 0, axis=1)
        return QPInstance(self.Q, self.A[keep], self.b[keep], self.H, self.g)


def assemble_shape(
    z: np.ndarray,
    problem: GraspProblem,
    grid: np.ndarray,
    geometry: Optional[GraspGeometry] = None,
) -> ShapeQP:
    """
    Contact position/slope equalities, sweep non-penetration and jaw clearance inequalities.

    Inequality rows come in three groups of N_y + 1: v_L <= b_U, -v_R <= -b_L,
    v_L - v_R <= min gamma. Rows at heights no shape reaches are all-zero so
    the dimensions do not depend on z.

    Raises:
        StructuralFailure: horizontal contact tangent or contact outside the grid span
    """
    grid = np.asarray(grid, dtype=float)
    geometry = geometry or grasp_geometry(z, problem)
    n_points = len(grid)
    index = ShapeIndex(n_points)

    b_upper, b_lower = sweep_bounds(geometry["left_shapes"], geometry["right_shapes"], grid, geometry["obstacles"])

    H_rows, g_values, contact_rows = [], [], []
    for contact in geometry["contacts"]:
        x_c, y_c = contact["point"]
        t = contact["tangent"]
        if abs(t[1]) < HORIZONTAL_TANGENT_EPS:
            raise StructuralFailure(
                f"Contact {contact['index']} of object {contact['object']} has a horizontal tangent",
                violation=1.0,
            )
        i, l = locate_interval(grid, y_c)
        i, l = int(i[0]), l[0]
        dy = grid[i + 1] - grid[i]
        jaw = contact["jaw"]
        h00, h01, h10, h11 = hermite_basis(l)
        d00, d01, d10, d11 = hermite_basis_slope(l)

        position = np.zeros(index.size)
        position[index.v(jaw, i)] = h00
        position[index.v(jaw, i + 1)] = h01
        position[index.m(jaw, i)] = dy * h10
        position[index.m(jaw, i + 1)] = dy * h11

        slope = np.zeros(index.size)
        slope[index.v(jaw, i)] = d00 / dy
        slope[index.v(jaw, i + 1)] = d01 / dy
        slope[index.m(jaw, i)] = d10
        slope[index.m(jaw, i + 1)] = d11

        contact_rows.append({"object": contact["object"], "index": contact["index"], "jaw": jaw,
                             "rows": (len(H_rows), len(H_rows) + 1), "height": float(y_c)})
        H_rows += [position, slope]
        g_values += [x_c, t[0] / t[1]]

    A = np.zeros((3 * n_points, index.size))
    b = np.zeros(3 * n_points)
    clearance = min(geometry["gammas"])
    for i in range(n_points):
        if np.isfinite(b_upper[i]):
            A[i, index.v("L", i)] = 1.0
            b[i] = b_upper[i]
        if np.isfinite(b_lower[i]):
            A[n_points + i, index.v("R", i)] = -1.0
            b[n_points + i] = -b_lower[i]
        A[2 * n_points + i, index.v("L", i)] = 1.0
        A[2 * n_points + i, index.v("R", i)] = -1.0
        b[2 * n_points + i] = clearance

    Q = shape_cost(z, problem, grid, geometry)
    return ShapeQP(grid, Q, A, b, np.array(H_rows).reshape(-1, index.size), np.array(g_values),
                   b_upper, b_lower, contact_rows)


class ShapeSolution(TypedDict):
    status: str
    cost: float
    surface: Optional[SurfaceParams]
    result: Optional[QPResult]
    message: str


def solve_shape(
    z: np.ndarray,
    problem: GraspProblem,
    grid: np.ndarray,
    qp_solver: Optional[QPSolver] = None,
) -> ShapeSolution:
    """Globally optimal jaw surfaces for a fixed configuration z."""
    solver = qp_solver or get_qp_solver()
    try:
        shape_qp = assemble_shape(z, problem, grid)
    except StructuralFailure as e:
        return ShapeSolution(status=INFEASIBLE, cost=np.inf, surface=None, result=None, message=str(e))
    result = solver.solve(shape_qp.instance())
    if result["status"] != OPTIMAL:
        return ShapeSolution(status=result["status"], cost=np.inf, surface=None, result=result,
                             message=result["message"])
    surface = SurfaceParams.from_vector(np.asarray(grid, dtype=float), result["u"])
    return ShapeSolution(status=OPTIMAL, cost=result["objective"], surface=surface, result=result,
                         message=result["message"])


def bound_violations(surface: SurfaceParams, b_upper: np.ndarray, b_lower: np.ndarray, tol: float = 1e-8) -> int:
    """Number of breakpoint non-penetration constraints violated by more than tol."""
    v_left, _ = surface.jaw("L")
    v_right, _ = surface.jaw("R")
    over = np.isfinite(b_upper) & (v_left > b_upper + tol)
    under = np.isfinite(b_lower) & (v_right < b_lower - tol)
    return int(over.sum() + under.sum())


def resample_surface(surface: SurfaceParams, grid: np.ndarray) -> SurfaceParams:
    """Evaluate a surface at new breakpoints, keeping exact positions and slopes."""
    grid = np.asarray(grid, dtype=float)
    V = np.concatenate([hermite_position(surface, jaw, grid) for jaw in ("L", "R")])
    M = np.concatenate([hermite_slope(surface, jaw, grid) for jaw in ("L", "R")])
    return SurfaceParams(grid, V, M)
