"""
Grasp stability program and quality metric.

For one object and one external wrench w, with variables x = [r, q, c]
(virtual object displacement r in SE(2), jaw displacements q along +x,
contact forces c interleaved normal/tangent per contact):

    minimize    (r'r + q'q) / (2 L^2)
    subject to  G c + w = 0                     static equilibrium
                c_n = -(G'r - J q)_n            unit-stiffness compliance
                (G'r - J q)_n <= 0              springs only compress
                [1, 0] J'c >= preload           left-jaw squeeze resultant
                |c_t| <= mu c_n                 friction cone

The quality metric sums the optimal cost over w = [0, 0, +1] and [0, 0, -1].
"""

import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple, TypedDict

import numpy as np
from scipy.linalg import block_diag
from scipy.optimize import linprog

from core.geometry import ContactAssignment, GraspConfig, Polygon, edge_contact
from core.problem import GraspObject, GraspProblem
from core.qp import FAILED, OPTIMAL, QPInstance, QPResult, QPSolver, get_qp_solver
from utils.errors import GeometryError

logger = logging.getLogger(__name__)

MOTION_SIZE = 5  # r (3) + q (2)
WRENCHES = (("+", np.array([0.0, 0.0, 1.0])), ("-", np.array([0.0, 0.0, -1.0])))
RETRY_REGULARIZATION = 1e-9


def cross2(p: np.ndarray, f: np.ndarray) -> float:
    return float(p[0] * f[1] - p[1] * f[0])


def contact_levers(
    left_polygon: Polygon,
    contacts: Sequence[ContactAssignment],
    d: Sequence[float],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Contact positions relative to the object origin, tangents and normals, all in jaw-axis-aligned axes."""
    points, tangents, normals = [], [], []
    for contact in contacts:
        p, t, n = edge_contact(left_polygon, contact.edge, float(d[contact.contact_index]))
        points.append(p - left_polygon.origin)
        tangents.append(t)
        normals.append(n)
    return np.array(points), np.array(tangents), np.array(normals)


def _grasp_matrix(points: np.ndarray, tangents: np.ndarray, normals: np.ndarray) -> np.ndarray:
    n_contacts = len(points)
    G = np.zeros((3, 2 * n_contacts))
    for i in range(n_contacts):
        G[:2, 2 * i] = normals[i]
        G[2, 2 * i] = cross2(points[i], normals[i])
        G[:2, 2 * i + 1] = tangents[i]
        G[2, 2 * i + 1] = cross2(points[i], tangents[i])
    return G


def _hand_jacobian(tangents: np.ndarray, normals: np.ndarray, jaws: Sequence[str]) -> np.ndarray:
    J = np.zeros((2 * len(jaws), 2))
    for i, jaw in enumerate(jaws):
        if jaw not in ("L", "R"):
            raise GeometryError(f"Contact {i} assigned to unknown jaw '{jaw}'")
        column = 0 if jaw == "L" else 1
        J[2 * i, column] = normals[i][0]
        J[2 * i + 1, column] = tangents[i][0]
    return J


def grasp_matrix(z_k: GraspConfig, obj: GraspObject) -> np.ndarray:
    """Map from interleaved contact forces to the net wrench (f_x, f_y, tau) about the object origin."""
    left, _ = obj.in_gripper(z_k)
    return _grasp_matrix(*contact_levers(left, obj.contacts, z_k.d))


def hand_jacobian(z_k: GraspConfig, obj: GraspObject) -> np.ndarray:
    """Map from jaw displacements (L, R) along +x to contact-frame displacements."""
    left, _ = obj.in_gripper(z_k)
    _, tangents, normals = contact_levers(left, obj.contacts, z_k.d)
    return _hand_jacobian(tangents, normals, [c.jaw for c in obj.contacts])


class SingleGraspQP:
    """Stability program of one object under one wrench."""

    def __init__(
        self,
        G: np.ndarray,
        J: np.ndarray,
        w: np.ndarray,
        mu: float,
        length: float,
        preload: float = 0.0,
        regularization: float = 0.0,
    ):
        self.G = np.asarray(G, dtype=float)
        self.J = np.asarray(J, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.mu = float(mu)
        self.length = float(length)
        self.preload = float(preload)
        self.regularization = float(regularization)
        if self.G.shape[1] != self.J.shape[0] or self.J.shape[1] != 2:
            raise GeometryError(f"Inconsistent G {self.G.shape} and J {self.J.shape}")

    @property
    def n_contacts(self) -> int:
        return self.G.shape[1] // 2

    @property
    def n_vars(self) -> int:
        return MOTION_SIZE + 2 * self.n_contacts

    @property
    def n_inequalities(self) -> int:
        return 3 * self.n_contacts + 1

    @property
    def n_equalities(self) -> int:
        return 3 + self.n_contacts

    def matrices(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(Q, A, b, H, g) over x = [r, q, c]."""
        nc = self.n_contacts
        normal_rows = np.arange(0, 2 * nc, 2)
        pick_n = np.zeros((nc, 2 * nc))
        pick_n[np.arange(nc), normal_rows] = 1.0
        pick_t = np.zeros((nc, 2 * nc))
        pick_t[np.arange(nc), normal_rows + 1] = 1.0
        motion_pad = np.zeros((nc, MOTION_SIZE))
        force_pad = np.zeros((nc, 2 * nc))

        normal_motion = np.hstack([self.G.T[normal_rows], -self.J[normal_rows], force_pad])

        H = np.vstack([
            np.hstack([np.zeros((3, MOTION_SIZE)), self.G]),
            normal_motion + np.hstack([motion_pad, pick_n]),
        ])
        g = np.concatenate([-self.w, np.zeros(nc)])

        A = np.vstack([
            normal_motion,
            np.hstack([np.zeros((1, MOTION_SIZE)), -self.J[:, 0][None, :]]),
            np.hstack([motion_pad, pick_t - self.mu * pick_n]),
            np.hstack([motion_pad, -pick_t - self.mu * pick_n]),
        ])
        b = np.concatenate([np.zeros(nc), [-self.preload], np.zeros(2 * nc)])

        Q = np.diag(np.concatenate([
            np.full(MOTION_SIZE, 1.0 / self.length ** 2),
            np.full(2 * nc, self.regularization),
        ]))
        return Q, A, b, H, g

    def instance(self) -> QPInstance:
        Q, A, b, H, g = self.matrices()
        return QPInstance(Q, A, b, H, g)


def assemble_single(
    z_k: GraspConfig,
    obj: GraspObject,
    w: np.ndarray,
    mu: float,
    length: Optional[float] = None,
    preload: float = 0.0,
    regularization: float = 0.0,
) -> SingleGraspQP:
    left, _ = obj.in_gripper(z_k)
    points, tangents, normals = contact_levers(left, obj.contacts, z_k.d)
    G = _grasp_matrix(points, tangents, normals)
    J = _hand_jacobian(tangents, normals, [c.jaw for c in obj.contacts])
    length = obj.characteristic_length() if length is None else length
    return SingleGraspQP(G, J, w, mu, length, preload, regularization)


class ConsolidatedStabilityQP:
    """All (object, wrench sign) stability programs stacked block-diagonally, + signs first."""

    def __init__(self, singles: Sequence[Tuple[int, str, SingleGraspQP]]):
        self.blocks: List[Dict[str, Any]] = []
        Qs, As, bs, Hs, gs = [], [], [], [], []
        var = ineq = eq = 0
        for k, sign, single in singles:
            Q, A, b, H, g = single.matrices()
            self.blocks.append({
                "object": k,
                "sign": sign,
                "vars": slice(var, var + single.n_vars),
                "ineq": slice(ineq, ineq + single.n_inequalities),
                "eq": slice(eq, eq + single.n_equalities),
                "n_contacts": single.n_contacts,
            })
            var += single.n_vars
            ineq += single.n_inequalities
            eq += single.n_equalities
            Qs.append(Q)
            As.append(A)
            bs.append(b)
            Hs.append(H)
            gs.append(g)
        self.Q = block_diag(*Qs)
        self.A = block_diag(*As)
        self.b = np.concatenate(bs)
        self.H = block_diag(*Hs)
        self.g = np.concatenate(gs)

    @property
    def n_vars(self) -> int:
        return self.Q.shape[0]

    def instance(self) -> QPInstance:
        return QPInstance(self.Q, self.A, self.b, self.H, self.g)

    def block_costs(self, u: np.ndarray) -> List[Dict[str, Any]]:
        costs = []
        for block in self.blocks:
            x = u[block["vars"]]
            Q = self.Q[block["vars"], block["vars"]]
            costs.append({"object": block["object"], "sign": block["sign"], "value": float(0.5 * x @ Q @ x)})
        return costs


def consolidate_stability(
    z: np.ndarray,
    problem: GraspProblem,
    regularization: Optional[float] = None,
) -> ConsolidatedStabilityQP:
    params = problem.params
    regularization = params.stability_regularization if regularization is None else regularization
    configs = problem.layout.split(z)
    lengths = problem.characteristic_lengths()
    singles = []
    for sign, w in WRENCHES:
        for k, (obj, z_k) in enumerate(zip(problem.objects, configs)):
            singles.append((k, sign, assemble_single(z_k, obj, w, params.mu, lengths[k], 0.0, regularization)))
    return ConsolidatedStabilityQP(singles)


class QualityReport(TypedDict):
    status: str
    total: float
    breakdown: List[Dict[str, Any]]
    u: Optional[np.ndarray]
    regularization: float
    result: QPResult


def grasp_quality(
    z: np.ndarray,
    problem: GraspProblem,
    qp_solver: Optional[QPSolver] = None,
) -> QualityReport:
    """
    Sum of optimal stability costs over all objects and both wrench signs.

    A failed solve is retried once with a small diagonal regularisation on the
    contact forces; the regularisation actually used is reported.
    """
    solver = qp_solver or get_qp_solver()
    regularization = problem.params.stability_regularization
    consolidated = consolidate_stability(z, problem, regularization)
    result = solver.solve(consolidated.instance())
    if result["status"] == FAILED and regularization < RETRY_REGULARIZATION:
        logger.debug("Stability QP failed, retrying with regularisation")
        regularization = RETRY_REGULARIZATION
        consolidated = consolidate_stability(z, problem, regularization)
        result = solver.solve(consolidated.instance())

    if result["status"] != OPTIMAL:
        return QualityReport(status=result["status"], total=np.inf, breakdown=[], u=None,
                             regularization=regularization, result=result)

    breakdown = consolidated.block_costs(result["u"])
    for entry in breakdown:
        entry["name"] = problem.objects[entry["object"]].name
    return QualityReport(
        status=OPTIMAL,
        total=float(sum(entry["value"] for entry in breakdown)),
        breakdown=breakdown,
        u=result["u"],
        regularization=regularization,
        result=result,
    )


def squeeze_feasible(
    left_polygon: Polygon,
    contacts: Sequence[ContactAssignment],
    d: Sequence[float],
    mu: float,
) -> bool:
    """Whether the unloaded program admits a unit left-jaw preload (linear feasibility)."""
    points, tangents, normals = contact_levers(left_polygon, contacts, d)
    single = SingleGraspQP(
        _grasp_matrix(points, tangents, normals),
        _hand_jacobian(tangents, normals, [c.jaw for c in contacts]),
        np.zeros(3),
        mu,
        1.0,
        preload=1.0,
    )
    _, A, b, H, g = single.matrices()
    result = linprog(
        np.zeros(single.n_vars),
        A_ub=A,
        b_ub=b,
        A_eq=H,
        b_eq=g,
        bounds=[(None, None)] * single.n_vars,
        method="highs",
    )
    return result.status == 0


def quality_curve(
    problem: GraspProblem,
    k: int,
    thetas: Sequence[float],
    qp_solver: Optional[QPSolver] = None,
) -> List[Dict[str, Any]]:
    """
    Grasp quality of object k as a function of grasp orientation.

    Contacts sit at edge midpoints and the gripper at the object origin.
    Angles are radians; rows carry both radians and degrees.
    """
    obj = problem.objects[k]
    sub_problem = GraspProblem([obj], problem.params, name=f"{problem.name}:{obj.name}")
    rows = []
    for theta in thetas:
        z_k = GraspConfig(obj.world_origin.copy(), float(theta), 0.0, np.full(obj.n_contacts, 0.5))
        report = grasp_quality(sub_problem.layout.join([z_k]), sub_problem, qp_solver)
        rows.append({
            "theta": float(theta),
            "theta_deg": math.degrees(theta),
            "quality": report["total"],
            "status": report["status"],
        })
    return rows
