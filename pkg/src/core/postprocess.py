"""
Contact repair and surface refinement for ranked candidates.

Stage A pushes contacts out of other shapes that share their jaw frame while
staying inside a small box around the candidate configuration. Stage B
re-solves the shape program exactly on a locally refined grid around the
contacts.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple, TypedDict

import numpy as np
from scipy.optimize import minimize

from core.alm import PenaltyEvaluator, forward_difference_gradient
from core.geometry import signed_distance
from core.problem import POSE_SLOTS, GraspProblem
from core.qp import OPTIMAL, QPSolver, get_qp_solver
from core.shape import (
    GraspGeometry,
    SurfaceParams,
    assemble_shape,
    bound_violations,
    grasp_geometry,
    resample_surface,
    uniform_grid,
)
from utils.config import OptimizationParams
from utils.errors import StructuralFailure

logger = logging.getLogger(__name__)

NOT_NEEDED = "not_needed"
REPAIRED = "repaired"
FAILURE = "failure"
REFINED = "refined"

CLEARANCE_TOLERANCE = 1e-9
REPAIR_MARGIN = 1e-6
BREAKPOINT_MERGE = 0.05
CONTACT_TOLERANCE = 1e-10
PROJECTION_STEPS = 3


def contact_clearances(z: np.ndarray, problem: GraspProblem, geometry: Optional[GraspGeometry] = None) -> np.ndarray:
    """
    Signed distance of every contact to the nearest other shape in its jaw frame.

    Other objects and all obstacles count; the contact's own object does not.
    Contacts with nothing to collide with get +inf.
    """
    geometry = geometry or grasp_geometry(z, problem)
    clearances = []
    for contact in geometry["contacts"]:
        jaw_shapes = geometry["left_shapes"] if contact["jaw"] == "L" else geometry["right_shapes"]
        side = 0 if contact["jaw"] == "L" else 1
        others = [shape for m, shape in enumerate(jaw_shapes) if m != contact["object"]]
        others += [pair[side] for pair in geometry["obstacles"]]
        if not others:
            clearances.append(np.inf)
            continue
        clearances.append(min(signed_distance(contact["point"], shape) for shape in others))
    return np.array(clearances, dtype=float)


def repair_box(z: np.ndarray, problem: GraspProblem, params: Optional[OptimizationParams] = None) -> List[Tuple[float, float]]:
    """Small neighbourhood of z intersected with the search box Z."""
    params = params or problem.params
    length = float(problem.characteristic_lengths().max())
    widths = np.zeros(len(z))
    for k, obj in enumerate(problem.objects):
        start = problem.layout.offsets[k]
        widths[start:start + 2] = params.repair_length_fraction * length
        widths[start + 2] = params.repair_theta
        widths[start + 3] = params.repair_length_fraction * length
        widths[start + POSE_SLOTS:start + POSE_SLOTS + obj.n_contacts] = params.repair_d

    box = []
    for value, width, (low, high) in zip(z, widths, problem.config_bounds()):
        box.append((max(low, value - width), min(high, value + width)))
    return box


def contact_band(geometry: GraspGeometry, grid: np.ndarray, params: OptimizationParams) -> Tuple[float, float]:
    """Height band around the contacts, clipped to the grid span."""
    heights = np.array([c["point"][1] for c in geometry["contacts"]])
    margin = params.band_sigmas * params.sigma
    low = max(float(grid[0]), float(heights.min()) - margin)
    high = min(float(grid[-1]), float(heights.max()) + margin)
    return low, high


class RepairResult(TypedDict):
    status: str
    z: np.ndarray
    min_clearance: float
    value: float
    message: str


def _inside(x: np.ndarray, box: Sequence[Tuple[float, float]]) -> np.ndarray:
    lower = np.array([b[0] for b in box])
    upper = np.array([b[1] for b in box])
    return np.clip(x, lower, upper)


def stage_a(
    z: np.ndarray,
    problem: GraspProblem,
    params: Optional[OptimizationParams] = None,
    rho_final: Optional[float] = None,
    qp_solver: Optional[QPSolver] = None,
) -> RepairResult:
    """
    Move z inside its repair box until no contact is buried in another shape.

    A projection phase finds the nearest clear configuration; a second phase
    lowers L* (nu = 0, final penalty, contact-band grid) subject to the same
    clearance constraint. Either result is accepted only after an exact
    re-check of the clearances.
    """
    params = params or problem.params
    rho_final = params.rho_final if rho_final is None else float(rho_final)
    z = np.asarray(z, dtype=float)
    clearances = contact_clearances(z, problem)
    worst = float(clearances.min()) if clearances.size else np.inf
    if worst >= -CLEARANCE_TOLERANCE:
        return RepairResult(status=NOT_NEEDED, z=z.copy(), min_clearance=worst, value=np.nan, message="")

    logger.info(f"🔧 Repairing contacts, deepest penetration {-worst:.3e}")
    box = repair_box(z, problem, params)
    widths = np.array([max(high - low, 1e-12) for low, high in box])
    length = float(problem.characteristic_lengths().max())
    margin = REPAIR_MARGIN * length
    # +inf clearances capped at the object scale
    constraint = {"type": "ineq", "fun": lambda x: np.minimum(contact_clearances(x, problem), length) - margin}

    def clear(x):
        return float(contact_clearances(x, problem).min()) >= -CLEARANCE_TOLERANCE

    start = _inside(z, box)
    projection = minimize(
        lambda x: float(np.sum(((x - z) / widths) ** 2)),
        start,
        jac=lambda x: 2.0 * (x - z) / widths ** 2,
        method="SLSQP",
        bounds=box,
        constraints=[constraint],
        options={"maxiter": 200, "ftol": 1e-12},
    )
    projected = _inside(projection.x, box)
    if not clear(projected):
        worst_after = float(contact_clearances(projected, problem).min())
        logger.warning(f"⚠️ Contact repair failed, clearance {worst_after:.3e}")
        return RepairResult(status=FAILURE, z=z.copy(), min_clearance=worst_after, value=np.nan,
                            message="no clear configuration inside the repair box")

    grid = uniform_grid(params)
    low, high = contact_band(grasp_geometry(projected, problem), grid, params)
    band = np.unique(np.concatenate([grid[(grid > low) & (grid < high)], [low, high]]))
    evaluator = PenaltyEvaluator(problem, qp_solver, grid=band if len(band) >= 2 else grid)
    nu = np.zeros(evaluator.n_rows)
    cache: Dict[bytes, float] = {}

    def objective(x):
        key = np.asarray(x, dtype=float).tobytes()
        if key not in cache:
            cache[key] = evaluator.value(x, nu, rho_final)
        return cache[key]

    best_z, best_value = projected, objective(projected)
    try:
        descent = minimize(
            objective,
            projected,
            jac=lambda x: forward_difference_gradient(objective, np.asarray(x, float), objective(x), box, params.fd_step),
            method="SLSQP",
            bounds=box,
            constraints=[constraint],
            options={"maxiter": params.outer_iterations},
        )
        candidate = _inside(descent.x, box)
        if clear(candidate):
            value = objective(candidate)
            if value <= best_value:
                best_z, best_value = candidate, value
    except (ValueError, FloatingPointError) as e:
        logger.debug(f"Repair descent stopped early: {e}")

    final = float(contact_clearances(best_z, problem).min())
    logger.info(f"✅ Contacts repaired, clearance {final:.3e}")
    return RepairResult(status=REPAIRED, z=best_z, min_clearance=final, value=best_value, message="")


def merge_tolerance(params: OptimizationParams) -> float:
    """Smallest gap allowed between refined breakpoints."""
    low, high = params.grid_span
    return BREAKPOINT_MERGE * (high - low) / params.n_y


def _merge_into(kept: np.ndarray, heights: np.ndarray, tol: float) -> np.ndarray:
    for h in np.sort(heights):
        if kept.size == 0 or np.min(np.abs(kept - h)) >= tol:
            kept = np.append(kept, h)
    return np.sort(kept)


def refined_grid(z: np.ndarray, problem: GraspProblem, geometry: Optional[GraspGeometry] = None) -> np.ndarray:
    """
    Breakpoints for the final surface solve.

    The main grid is kept inside the contact band and augmented with every
    contact height plus every object and obstacle vertex height in the band.
    Contact heights are placed first; any other height closer than the merge
    tolerance to an existing breakpoint is dropped.
    """
    params = problem.params
    geometry = geometry or grasp_geometry(z, problem)
    main = uniform_grid(params)
    low, high = contact_band(geometry, main, params)
    tol = merge_tolerance(params)

    def in_band(values):
        values = np.asarray(values, dtype=float)
        return values[(values >= low) & (values <= high)]

    contacts = in_band([c["point"][1] for c in geometry["contacts"]])
    vertices = [shape.vertices[:, 1] for shape in geometry["left_shapes"]]
    vertices += [left.vertices[:, 1] for left, _ in geometry["obstacles"]]
    others = in_band(np.concatenate([[low, high], main[(main > low) & (main < high)], *vertices]))

    kept = _merge_into(np.zeros(0), contacts, tol)
    return _merge_into(kept, others, tol)


class RefinementResult(TypedDict):
    status: str
    surface: Optional[SurfaceParams]
    grid: np.ndarray
    cost: float
    contact_residual: float
    contact_exact: bool
    bound_violation: float
    violations_before: Optional[int]
    violations_after: Optional[int]
    message: str


def project_contacts(u: np.ndarray, H: np.ndarray, g: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Minimum-norm correction of u onto H u = g.

    Returns the corrected vector and the remaining max-norm residual over the
    position and slope rows.
    """
    u = np.asarray(u, dtype=float).copy()
    if H.shape[0] == 0:
        return u, 0.0
    residual = float(np.max(np.abs(H @ u - g)))
    for _ in range(PROJECTION_STEPS):
        if residual <= CONTACT_TOLERANCE:
            break
        step, *_ = np.linalg.lstsq(H, g - H @ u, rcond=None)
        candidate = u + step
        candidate_residual = float(np.max(np.abs(H @ candidate - g)))
        if candidate_residual >= residual:
            break
        u, residual = candidate, candidate_residual
    return u, residual


def _refinement_failure(grid: np.ndarray, message: str) -> "RefinementResult":
    return RefinementResult(status=FAILURE, surface=None, grid=grid, cost=np.inf, contact_residual=np.inf,
                            contact_exact=False, bound_violation=np.inf, violations_before=None,
                            violations_after=None, message=message)


def stage_b(
    z: np.ndarray,
    problem: GraspProblem,
    reference: Optional[SurfaceParams] = None,
    qp_solver: Optional[QPSolver] = None,
) -> RefinementResult:
    """
    Exact shape solve on the refined grid.

    When a reference surface from the main phase is given it is resampled on
    the refined grid and its non-penetration violations are counted too.
    """
    solver = qp_solver or get_qp_solver()
    geometry = grasp_geometry(z, problem)
    grid = refined_grid(z, problem, geometry)
    if len(grid) < 2:
        return _refinement_failure(grid, "contact band holds fewer than two breakpoints")
    try:
        shape_qp = assemble_shape(z, problem, grid, geometry)
    except StructuralFailure as e:
        return _refinement_failure(grid, str(e))

    result = solver.solve(shape_qp.instance())
    if result["status"] != OPTIMAL:
        return _refinement_failure(grid, result["message"])

    u, contact_residual = project_contacts(result["u"], shape_qp.H, shape_qp.g)
    surface = SurfaceParams.from_vector(grid, u)
    message = result["message"]
    if contact_residual > CONTACT_TOLERANCE:
        message = f"contact equalities hold only to {contact_residual:.2e}"
        logger.warning(f"⚠️ Refined surface: {message}")
    v_left, _ = surface.jaw("L")
    v_right, _ = surface.jaw("R")
    over = np.where(np.isfinite(shape_qp.b_upper), v_left - shape_qp.b_upper, 0.0)
    under = np.where(np.isfinite(shape_qp.b_lower), shape_qp.b_lower - v_right, 0.0)

    violations_before = None
    if reference is not None and reference.y[0] <= grid[0] and grid[-1] <= reference.y[-1]:
        violations_before = bound_violations(resample_surface(reference, grid), shape_qp.b_upper, shape_qp.b_lower)
    violations_after = bound_violations(surface, shape_qp.b_upper, shape_qp.b_lower)

    return RefinementResult(
        status=REFINED,
        surface=surface,
        grid=grid,
        cost=float(0.5 * u @ shape_qp.Q @ u),
        contact_residual=contact_residual,
        contact_exact=contact_residual <= CONTACT_TOLERANCE,
        bound_violation=float(max(0.0, over.max(initial=0.0), under.max(initial=0.0))),
        violations_before=violations_before,
        violations_after=violations_after,
        message=message,
    )

