"""
Augmented Lagrangian search over grasp configurations.

The stability and shape programs are stacked into one equality system
A(z) u = b(z) with nonnegative slacks on every inequality row. For fixed z
the penalty function

    L(z, u, nu) = 1/2 u_B'Q_B u_B + w/2 u_S'Q_S u_S + nu'(Au - b) + rho/2 ||Au - b||^2

is minimised globally over u (inner_min). The outer loop alternates a bounded
local descent in z, the dual and penalty updates, and restoration of the best
configuration seen so far. Multi-start runs are independent.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Sequence, Tuple, TypedDict

import numpy as np
from scipy.optimize import minimize

from core.problem import GraspProblem
from core.qp import FAILED, QPSolver, get_qp_solver
from core.shape import ShapeQP, SurfaceParams, assemble_shape, grasp_geometry, uniform_grid
from core.stability import ConsolidatedStabilityQP, consolidate_stability
from utils.config import OptimizationParams
from utils.errors import GeometryError, NoSurvivingCandidateError, StructuralFailure

logger = logging.getLogger(__name__)

INNER_RETRY_REGULARIZATION = 1e-9


class ConsolidatedSystem:
    """
    Stacked equality system over u = [u_B, s_B, u_S, s_S].

    Row order: stability inequalities (with slack identity), stability
    equalities, shape inequalities scaled by rho_S (with slack identity),
    shape equalities scaled by rho_S.
    """

    def __init__(self, stability: ConsolidatedStabilityQP, shape: ShapeQP, rho_s: float, shape_weight: float = 1.0):
        self.stability = stability
        self.shape = shape
        self.rho_s = float(rho_s)

        n_b, n_s = stability.n_vars, shape.n_vars
        m_bi, m_be = stability.A.shape[0], stability.H.shape[0]
        m_si, m_se = shape.A.shape[0], shape.H.shape[0]

        self.columns = {
            "u_B": slice(0, n_b),
            "s_B": slice(n_b, n_b + m_bi),
            "u_S": slice(n_b + m_bi, n_b + m_bi + n_s),
            "s_S": slice(n_b + m_bi + n_s, n_b + m_bi + n_s + m_si),
        }
        self.rows = {
            "B_ineq": slice(0, m_bi),
            "B_eq": slice(m_bi, m_bi + m_be),
            "S_ineq": slice(m_bi + m_be, m_bi + m_be + m_si),
            "S_eq": slice(m_bi + m_be + m_si, m_bi + m_be + m_si + m_se),
        }
        n_rows = m_bi + m_be + m_si + m_se
        n_cols = self.columns["s_S"].stop

        A = np.zeros((n_rows, n_cols))
        A[self.rows["B_ineq"], self.columns["u_B"]] = stability.A
        A[self.rows["B_ineq"], self.columns["s_B"]] = np.eye(m_bi)
        A[self.rows["B_eq"], self.columns["u_B"]] = stability.H
        A[self.rows["S_ineq"], self.columns["u_S"]] = self.rho_s * shape.A
        A[self.rows["S_ineq"], self.columns["s_S"]] = np.eye(m_si)
        A[self.rows["S_eq"], self.columns["u_S"]] = self.rho_s * shape.H
        self.A = A
        self.b = np.concatenate([stability.b, stability.g, self.rho_s * shape.b, self.rho_s * shape.g])

        Q = np.zeros((n_cols, n_cols))
        Q[self.columns["u_B"], self.columns["u_B"]] = stability.Q
        Q[self.columns["u_S"], self.columns["u_S"]] = shape_weight * shape.Q
        self.Q = Q

        self.slack_rows = np.zeros(n_rows, dtype=bool)
        self.slack_rows[self.rows["B_ineq"]] = True
        self.slack_rows[self.rows["S_ineq"]] = True
        self.core_columns = np.r_[np.arange(n_b), np.arange(self.columns["u_S"].start, self.columns["u_S"].stop)]
        self.slack_columns = np.r_[
            np.arange(self.columns["s_B"].start, self.columns["s_B"].stop),
            np.arange(self.columns["s_S"].start, self.columns["s_S"].stop),
        ]

    def core_matrices(self) -> Tuple[np.ndarray, np.ndarray]:
        core = self.core_columns
        return self.Q[np.ix_(core, core)], self.A[:, core]

    def assemble_u(self, u_core: np.ndarray, row_slack: np.ndarray) -> np.ndarray:
        """Full u from core variables and per-row slack values (zero on equality rows)."""
        u = np.zeros(self.A.shape[1])
        u[self.core_columns] = u_core
        u[self.slack_columns] = row_slack[self.slack_rows]
        return u

    def residual(self, u: np.ndarray) -> np.ndarray:
        return self.A @ u - self.b

    def lagrangian(self, u: np.ndarray, nu: np.ndarray, rho: float) -> float:
        r = self.residual(u)
        return float(0.5 * u @ self.Q @ u + nu @ r + 0.5 * rho * r @ r)

    def objective_parts(self, u: np.ndarray) -> Dict[str, Any]:
        u_b = u[self.columns["u_B"]]
        u_s = u[self.columns["u_S"]]
        return {
            "grasp_quality": self.stability.block_costs(u_b),
            "grasp_quality_total": float(0.5 * u_b @ self.stability.Q @ u_b),
            "shape_cost": float(0.5 * u_s @ self.shape.Q @ u_s),
        }

    def surface(self, u: np.ndarray) -> SurfaceParams:
        return SurfaceParams.from_vector(self.shape.grid, u[self.columns["u_S"]])


def system_rows(problem: GraspProblem, n_points: int) -> int:
    """Row count of A(z), fixed by the problem and grid size."""
    counts = [o.n_contacts for o in problem.objects]
    stability = 2 * sum((3 * n + 1) + (3 + n) for n in counts)
    shape = 3 * n_points + 2 * sum(counts)
    return stability + shape


def consolidate(z: np.ndarray, problem: GraspProblem, grid: Optional[np.ndarray] = None) -> ConsolidatedSystem:
    """
    Build A(z), b(z) and the block-diagonal cost.

    Raises:
        StructuralFailure: the shape program cannot be formed for this z
    """
    params = problem.params
    grid = uniform_grid(params) if grid is None else np.asarray(grid, dtype=float)
    stability = consolidate_stability(z, problem)
    shape = assemble_shape(z, problem, grid, grasp_geometry(z, problem))
    return ConsolidatedSystem(stability, shape, params.rho_s, params.shape_weight)


class InnerResult(TypedDict):
    status: str
    value: float
    u: np.ndarray
    residual: np.ndarray


def inner_min(
    system: ConsolidatedSystem,
    nu: np.ndarray,
    rho: float,
    qp_solver: Optional[QPSolver] = None,
    warm_start: Optional[np.ndarray] = None,
) -> InnerResult:
    """
    Global minimum of the penalty Lagrangian over u with s >= 0.

    Retries with a small regularisation, then through cvxpy, before giving up.
    """
    solver = qp_solver or get_qp_solver()
    Q_core, A_core = system.core_matrices()
    args = (Q_core, A_core, system.b, nu, rho, system.slack_rows)
    solve = solver.minimize_penalty(*args, u0=warm_start)
    if solve["status"] == FAILED:
        logger.debug("Penalty Newton failed, retrying with regularisation")
        solve = solver.minimize_penalty(*args, u0=None, regularization=INNER_RETRY_REGULARIZATION)
    if solve["status"] == FAILED:
        logger.debug("Penalty Newton failed twice, falling back to cvxpy")
        solve = solver.minimize_penalty_cvxpy(*args)
    u = system.assemble_u(solve["u"], solve["slack"])
    return InnerResult(status=solve["status"], value=solve["value"], u=u, residual=system.residual(u))


class Evaluation(TypedDict):
    value: float
    structural: bool
    u: Optional[np.ndarray]
    system: Optional[ConsolidatedSystem]
    residual_norm: float
    message: str


class PenaltyEvaluator:
    """z -> L*(z, nu) with warm starts and the structural-failure penalty."""

    def __init__(self, problem: GraspProblem, qp_solver: Optional[QPSolver] = None, grid: Optional[np.ndarray] = None):
        self.problem = problem
        self.solver = qp_solver or get_qp_solver()
        self.grid = uniform_grid(problem.params) if grid is None else np.asarray(grid, dtype=float)
        self.n_rows = system_rows(problem, len(self.grid))
        self.evaluations = 0
        self._warm: Optional[np.ndarray] = None

    def evaluate(self, z: np.ndarray, nu: np.ndarray, rho: float) -> Evaluation:
        self.evaluations += 1
        try:
            system = consolidate(np.asarray(z, dtype=float), self.problem, self.grid)
        except (StructuralFailure, GeometryError) as e:
            violation = getattr(e, "violation", 1.0)
            return Evaluation(value=self.problem.params.structural_penalty * (1.0 + violation), structural=True,
                              u=None, system=None, residual_norm=np.inf, message=str(e))
        result = inner_min(system, nu, rho, self.solver, self._warm)
        if result["status"] == FAILED or not np.isfinite(result["value"]):
            return Evaluation(value=self.problem.params.structural_penalty, structural=True, u=None,
                              system=system, residual_norm=np.inf, message="inner minimisation failed")
        self._warm = result["u"][system.core_columns]
        return Evaluation(value=result["value"], structural=False, u=result["u"], system=system,
                          residual_norm=float(np.max(np.abs(result["residual"]))), message="")

    def value(self, z: np.ndarray, nu: np.ndarray, rho: float) -> float:
        return self.evaluate(z, nu, rho)["value"]

    def value_at(self, z: np.ndarray, u: np.ndarray, nu: np.ndarray, rho: float) -> float:
        """L(z, u, nu) with u held fixed; no inner solve."""
        try:
            system = consolidate(np.asarray(z, dtype=float), self.problem, self.grid)
        except (StructuralFailure, GeometryError) as e:
            return self.problem.params.structural_penalty * (1.0 + getattr(e, "violation", 1.0))
        return system.lagrangian(u, nu, rho)


class ALMState(TypedDict):
    z: np.ndarray
    nu: np.ndarray
    rho: float
    phi: float
    value: float
    residual: float
    history: List[Dict[str, Any]]
    best: Dict[str, Any]
    iteration: int


def create_alm_state(z0: np.ndarray, n_rows: int, params: OptimizationParams) -> ALMState:
    return ALMState(
        z=np.asarray(z0, dtype=float).copy(),
        nu=np.zeros(n_rows),
        rho=params.rho0,
        phi=params.phi,
        value=np.inf,
        residual=np.inf,
        history=[],
        best={"z": np.asarray(z0, dtype=float).copy(), "value": np.inf},
        iteration=0,
    )


def restore_best(state: ALMState, evaluator) -> ALMState:
    """Re-score the incumbent and every historical z under the current (nu, rho); keep the lowest."""
    nu, rho = state["nu"], state["rho"]
    best_z = state["z"]
    best_value = evaluator.value(best_z, nu, rho)
    for entry in state["history"]:
        value = evaluator.value(entry["z"], nu, rho)
        if value < best_value:
            best_z, best_value = entry["z"], value

    new_state = state.copy()
    new_state["z"] = np.asarray(best_z, dtype=float).copy()
    new_state["value"] = best_value
    new_state["best"] = {"z": new_state["z"].copy(), "value": best_value}
    return new_state


def forward_difference_gradient(
    f,
    z: np.ndarray,
    f0: float,
    bounds: Sequence[Tuple[float, float]],
    step: float,
) -> np.ndarray:
    """Forward differences with relative step; steps backwards at an upper bound."""
    gradient = np.zeros_like(z)
    for i in range(len(z)):
        h = step * max(1.0, abs(z[i]))
        if z[i] + h > bounds[i][1]:
            h = -h
        trial = z.copy()
        trial[i] += h
        gradient[i] = (f(trial) - f0) / h
    return gradient


def envelope_gradient(
    evaluator,
    z: np.ndarray,
    evaluation: Evaluation,
    nu: np.ndarray,
    rho: float,
    bounds: Sequence[Tuple[float, float]],
    step: float,
) -> np.ndarray:
    """
    Gradient of z -> L*(z, nu) with the inner minimiser held at u*(z).

    Each coordinate costs one re-assembly of A(z), b(z) and no inner solve.
    """
    u = evaluation["u"]
    f0 = evaluation["system"].lagrangian(u, nu, rho)
    return forward_difference_gradient(lambda trial: evaluator.value_at(trial, u, nu, rho), z, f0, bounds, step)


def outer_step(
    state: ALMState,
    evaluator,
    bounds: Sequence[Tuple[float, float]],
    params: OptimizationParams,
) -> np.ndarray:
    """
    Bounded L-BFGS-B descent on z -> L*(z, nu) inside the box.

    The gradient follows params.gradient: "envelope" differences L at the
    fixed inner minimiser, "resolve" re-solves the inner problem per
    perturbation. Returns the best point evaluated, or the incumbent when
    nothing improved on it.
    """
    nu, rho = state["nu"], state["rho"]
    lower = np.array([b[0] for b in bounds])
    upper = np.array([b[1] for b in bounds])
    z0 = np.clip(np.asarray(state["z"], dtype=float), lower, upper)
    cache: Dict[bytes, float] = {}
    latest: Dict[bytes, Evaluation] = {}
    best = {"z": z0.copy(), "value": np.inf}

    def f(z):
        key = np.asarray(z, dtype=float).tobytes()
        if key not in cache:
            evaluation = evaluator.evaluate(z, nu, rho)
            latest.clear()
            latest[key] = evaluation
            value = evaluation["value"]
            cache[key] = value
            if value < best["value"]:
                best["z"], best["value"] = np.array(z, dtype=float), value
        return cache[key]

    f_start = f(z0)

    def jac(z):
        z = np.asarray(z, dtype=float)
        f0 = f(z)
        if params.gradient == "envelope":
            evaluation = latest.get(z.tobytes()) or evaluator.evaluate(z, nu, rho)
            if not evaluation["structural"]:
                return envelope_gradient(evaluator, z, evaluation, nu, rho, bounds, params.fd_step)
        return forward_difference_gradient(f, z, f0, bounds, params.fd_step)

    try:
        minimize(f, z0, jac=jac, method="L-BFGS-B", bounds=list(bounds),
                 options={"maxiter": params.outer_iterations})
    except (ValueError, FloatingPointError) as e:
        logger.debug(f"Outer descent stopped early: {e}")

    if best["value"] < f_start:
        return best["z"]
    return z0


def dual_penalty_update(state: ALMState, system: Optional[ConsolidatedSystem], u: Optional[np.ndarray]) -> ALMState:
    """nu <- nu + rho (A u - b), then rho <- phi rho."""
    new_state = state.copy()
    if system is not None and u is not None:
        new_state["nu"] = state["nu"] + state["rho"] * (system.A @ u - system.b)
    new_state["rho"] = state["rho"] * state["phi"]
    new_state["iteration"] = state["iteration"] + 1
    return new_state


class Candidate(TypedDict):
    start_index: int
    seed: int
    rank: int
    z: np.ndarray
    value: float
    residual: float
    structural: bool
    message: str
    grasp_quality: List[Dict[str, Any]]
    grasp_quality_total: float
    shape_cost: float
    surface: Optional[SurfaceParams]
    iterations: int
    evaluations: int
    elapsed: float


def optimize_start(
    problem: GraspProblem,
    start_index: int,
    seed: int,
    qp_solver: Optional[QPSolver] = None,
) -> Candidate:
    """One local run of the augmented Lagrangian loop from a randomised start."""
    started = time.time()
    params = problem.params
    rng = np.random.default_rng(seed)
    evaluator = PenaltyEvaluator(problem, qp_solver)
    bounds = problem.config_bounds()
    state = create_alm_state(problem.initial_config(rng), evaluator.n_rows, params)

    last: Optional[Evaluation] = None
    for iteration in range(params.iterations):
        state = restore_best(state, evaluator)
        z_new = outer_step(state, evaluator, bounds, params)
        last = evaluator.evaluate(z_new, state["nu"], state["rho"])

        state = state.copy()
        state["z"] = z_new
        state["value"] = last["value"]
        state["residual"] = last["residual_norm"]
        state["history"] = state["history"] + [{"z": z_new.copy(), "value": last["value"]}]
        state = dual_penalty_update(state, last["system"], last["u"])
        logger.debug(
            f"start {start_index} iter {iteration + 1}: L*={last['value']:.6g} "
            f"residual={last['residual_norm']:.3e} rho={state['rho']:.3e}"
        )

    ranking = evaluator.evaluate(state["z"], np.zeros(evaluator.n_rows), params.rho_final)
    candidate = Candidate(
        start_index=start_index,
        seed=int(seed),
        rank=-1,
        z=state["z"],
        value=ranking["value"],
        residual=last["residual_norm"] if last else np.inf,
        structural=ranking["structural"],
        message=ranking["message"],
        grasp_quality=[],
        grasp_quality_total=np.nan,
        shape_cost=np.nan,
        surface=None,
        iterations=state["iteration"],
        evaluations=evaluator.evaluations,
        elapsed=time.time() - started,
    )
    if not ranking["structural"]:
        parts = ranking["system"].objective_parts(ranking["u"])
        candidate["grasp_quality"] = parts["grasp_quality"]
        candidate["grasp_quality_total"] = parts["grasp_quality_total"]
        candidate["shape_cost"] = parts["shape_cost"]
        candidate["surface"] = ranking["system"].surface(ranking["u"])
    return candidate


def _optimize_start_job(args) -> Candidate:
    problem, start_index, seed = args
    return optimize_start(problem, start_index, seed)


def start_seeds(seed: int, starts: int) -> List[int]:
    """Independent per-start seeds derived from the single run seed."""
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(starts)]


def rank_candidates(candidates: Sequence[Candidate]) -> List[Candidate]:
    ranked = sorted(candidates, key=lambda c: (c["structural"], c["value"], c["start_index"]))
    for rank, candidate in enumerate(ranked):
        candidate["rank"] = rank
    return ranked


def multistart_optimize(
    problem: GraspProblem,
    params: Optional[OptimizationParams] = None,
    qp_solver: Optional[QPSolver] = None,
) -> List[Candidate]:
    """
    Run params.starts independent local searches and rank them.

    Ranking uses L* at nu = 0 and the final penalty, shared by all starts.

    Raises:
        NoSurvivingCandidateError: every start ended in a structural failure
    """
    if params is not None:
        problem = problem.with_params(params)
    params = problem.params
    problem.theta_bounds()
    seeds = start_seeds(params.seed, params.starts)
    logger.info(f"🚀 Multi-start search: {params.starts} starts, {params.iterations} iterations each")

    if params.workers > 1:
        jobs = [(problem, i, seed) for i, seed in enumerate(seeds)]
        with ProcessPoolExecutor(max_workers=params.workers) as pool:
            candidates = list(pool.map(_optimize_start_job, jobs))
    else:
        candidates = [optimize_start(problem, i, seed, qp_solver) for i, seed in enumerate(seeds)]

    ranked = rank_candidates(candidates)
    if all(c["structural"] for c in ranked):
        diagnostics = [{"start_index": c["start_index"], "seed": c["seed"], "message": c["message"]} for c in ranked]
        raise NoSurvivingCandidateError("All starts failed structurally", diagnostics)

    best = ranked[0]
    logger.info(f"✅ Best start {best['start_index']}: L*={best['value']:.6g}, residual={best['residual']:.2e}")
    return ranked
