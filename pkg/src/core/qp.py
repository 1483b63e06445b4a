"""
Convex quadratic programming layer.

Every program has the form

    minimize    1/2 u'Qu + c'u
    subject to  A u <= b,  H u = g,  u[i] >= 0 for i in nonneg

with Q positive semidefinite. Solves go through cvxpy (Clarabel interior
point) and are then polished by an active-set KKT solve with iterative
refinement, so an `optimal` status always comes with KKT residuals below the
configured tolerance.

The same module hosts the penalty minimiser used by the augmented Lagrangian:
slack variables are eliminated in closed form and the remaining convex
piecewise-quadratic function is minimised with a semismooth Newton method.
"""

import logging
import os
from typing import Optional, Sequence, TypedDict

import cvxpy as cp
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
FAILED = "failed"


def _dense(matrix, rows: Optional[int] = None, cols: Optional[int] = None) -> np.ndarray:
    if matrix is None:
        return np.zeros((rows or 0, cols or 0))
    if hasattr(matrix, "toarray"):
        matrix = matrix.toarray()
    return np.asarray(matrix, dtype=float)


class QPInstance:
    """Immutable convex QP data. Q is symmetrised on construction."""

    def __init__(self, Q, A=None, b=None, H=None, g=None, nonneg: Sequence[int] = (), c=None):
        Q = _dense(Q)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got shape {Q.shape}")
        n = Q.shape[0]
        self.Q = 0.5 * (Q + Q.T)
        self.c = np.zeros(n) if c is None else np.asarray(c, dtype=float).reshape(n)
        self.A = _dense(A, 0, n).reshape(-1, n)
        self.b = np.asarray([] if b is None else b, dtype=float).reshape(-1)
        self.H = _dense(H, 0, n).reshape(-1, n)
        self.g = np.asarray([] if g is None else g, dtype=float).reshape(-1)
        self.nonneg = np.unique(np.asarray(list(nonneg), dtype=int))

        if len(self.b) != self.A.shape[0]:
            raise ValueError(f"A has {self.A.shape[0]} rows but b has {len(self.b)} entries")
        if len(self.g) != self.H.shape[0]:
            raise ValueError(f"H has {self.H.shape[0]} rows but g has {len(self.g)} entries")
        if len(self.nonneg) and (self.nonneg.min() < 0 or self.nonneg.max() >= n):
            raise ValueError("nonneg indices out of range")

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def inequalities(self):
        """A and b with the nonnegativity bounds appended as -u_i <= 0 rows."""
        if not len(self.nonneg):
            return self.A, self.b
        bounds = -np.eye(self.n)[self.nonneg]
        return np.vstack([self.A, bounds]), np.concatenate([self.b, np.zeros(len(self.nonneg))])

    def objective(self, u: np.ndarray) -> float:
        return float(0.5 * u @ self.Q @ u + self.c @ u)


class KKTReport(TypedDict):
    stationarity: float
    primal: float
    dual: float
    complementarity: float
    tolerance: float
    passed: bool


class QPResult(TypedDict):
    status: str
    u: Optional[np.ndarray]
    ineq_duals: Optional[np.ndarray]  # stacked: A rows, then nonneg rows
    eq_duals: Optional[np.ndarray]
    objective: float
    kkt: Optional[KKTReport]
    message: str


class PenaltySolve(TypedDict):
    status: str
    value: float
    u: np.ndarray
    slack: np.ndarray
    iterations: int


def kkt_check(instance: QPInstance, result: QPResult, tol: float = 1e-8) -> KKTReport:
    """
    Scaled KKT residuals of a primal/dual pair.

    Stationarity is Qu + c + A'lam + H'nu = 0 with lam for the stacked
    inequalities; each residual is divided by one plus the magnitude of the
    terms it balances.
    """
    u = np.asarray(result["u"], dtype=float)
    A, b = instance.inequalities()
    lam = np.zeros(A.shape[0]) if result.get("ineq_duals") is None else np.asarray(result["ineq_duals"], float)
    nu = np.zeros(instance.H.shape[0]) if result.get("eq_duals") is None else np.asarray(result["eq_duals"], float)

    Qu = instance.Q @ u
    At_lam = A.T @ lam
    Ht_nu = instance.H.T @ nu
    gradient = Qu + instance.c + At_lam + Ht_nu
    grad_scale = 1.0 + max(_inf(Qu), _inf(instance.c), _inf(At_lam), _inf(Ht_nu))

    Au = A @ u
    Hu = instance.H @ u
    primal_raw = max(_inf(np.maximum(Au - b, 0.0)), _inf(Hu - instance.g))
    primal_scale = 1.0 + max(_inf(b), _inf(instance.g), _inf(Au), _inf(Hu))

    dual = _inf(np.maximum(-lam, 0.0))
    complementarity = _inf(lam * (b - Au)) / (1.0 + max(_inf(lam), _inf(b), _inf(Au)))

    report = KKTReport(
        stationarity=_inf(gradient) / grad_scale,
        primal=primal_raw / primal_scale,
        dual=dual,
        complementarity=complementarity,
        tolerance=tol,
        passed=False,
    )
    report["passed"] = max(report["stationarity"], report["primal"], report["dual"], report["complementarity"]) <= tol
    return report


def _inf(vector: np.ndarray) -> float:
    vector = np.asarray(vector)
    return float(np.max(np.abs(vector))) if vector.size else 0.0


def _kkt_worst(report: Optional[KKTReport]) -> float:
    if report is None:
        return np.inf
    return max(report["stationarity"], report["primal"], report["dual"], report["complementarity"])


class QPSolver:
    """
    Reentrant convex QP solver with KKT certification.

    Instances are never mutated; identical inputs give identical outputs.
    """

    def __init__(
        self,
        tolerance: float = 1e-8,
        polish: bool = True,
        kkt_regularization: float = 1e-8,
        max_refinements: int = 30,
        max_active_set_changes: int = 50,
        interior_iterations: int = 300,
    ):
        self.tolerance = tolerance
        self.polish = polish
        self.kkt_regularization = kkt_regularization
        self.max_refinements = max_refinements
        self.max_active_set_changes = max_active_set_changes
        self.interior_iterations = interior_iterations

    # ------------------------------------------------------------------
    # Exact QP solves
    # ------------------------------------------------------------------

    def solve(self, instance: QPInstance, tol: Optional[float] = None) -> QPResult:
        """
        Solve to global optimality; status is optimal, infeasible or failed.

        An interior-point run stopped at its iteration limit still goes through
        the active-set polish and is accepted only if the KKT check passes.
        """
        tol = self.tolerance if tol is None else tol
        A, b = instance.inequalities()

        u = cp.Variable(instance.n)
        if np.any(instance.Q):
            objective = 0.5 * cp.quad_form(u, cp.psd_wrap(instance.Q)) + instance.c @ u
        else:
            objective = instance.c @ u
        constraints = []
        if A.shape[0]:
            constraints.append(A @ u <= b)
        if instance.H.shape[0]:
            constraints.append(instance.H @ u == instance.g)
        problem = cp.Problem(cp.Minimize(objective), constraints)

        try:
            problem.solve(
                solver=cp.CLARABEL,
                tol_gap_abs=1e-10,
                tol_gap_rel=1e-10,
                tol_feas=1e-10,
                max_iter=self.interior_iterations,
            )
        except cp.SolverError as e:
            logger.debug(f"Clarabel failed ({e}); retrying with the default solver")
            try:
                problem.solve()
            except cp.SolverError as e2:
                return self._failed(f"solver error: {e2}")

        status = problem.status
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return QPResult(status=INFEASIBLE, u=None, ineq_duals=None, eq_duals=None,
                            objective=np.inf, kkt=None, message=f"solver reported {status}")
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE, cp.USER_LIMIT) or u.value is None:
            return self._failed(f"solver reported {status}")
        source = "interior point" if status != cp.USER_LIMIT else f"interior point stopped at {status}"

        u_ip = np.asarray(u.value, dtype=float)
        lam_ip = np.zeros(A.shape[0])
        if A.shape[0] and constraints[0].dual_value is not None:
            lam_ip = np.maximum(np.asarray(constraints[0].dual_value, dtype=float).reshape(-1), 0.0)
        nu_ip = self._equality_duals(instance, A, u_ip, lam_ip)
        best = self._result(instance, u_ip, lam_ip, nu_ip, tol, source)

        if self.polish:
            polished = self._polish(instance, A, b, u_ip, lam_ip, tol)
            if polished is not None and _kkt_worst(polished["kkt"]) <= _kkt_worst(best["kkt"]):
                best = polished

        if not best["kkt"]["passed"]:
            best["status"] = FAILED
            best["message"] += f"; KKT residual {_kkt_worst(best['kkt']):.2e} above {tol:.1e}"
        return best

    def _failed(self, message: str) -> QPResult:
        logger.debug(f"QP failed: {message}")
        return QPResult(status=FAILED, u=None, ineq_duals=None, eq_duals=None,
                        objective=np.nan, kkt=None, message=message)

    def _result(self, instance, u, lam, nu, tol, source: str) -> QPResult:
        result = QPResult(status=OPTIMAL, u=u, ineq_duals=lam, eq_duals=nu,
                          objective=instance.objective(u), kkt=None, message=source)
        result["kkt"] = kkt_check(instance, result, tol)
        return result

    def _equality_duals(self, instance, A, u, lam) -> np.ndarray:
        if not instance.H.shape[0]:
            return np.zeros(0)
        residual = instance.Q @ u + instance.c + A.T @ lam
        return -np.linalg.lstsq(instance.H.T, residual, rcond=None)[0]

    def _polish(self, instance, A, b, u, lam, tol) -> Optional[QPResult]:
        slack = b - A @ u
        active = lam > np.maximum(slack, 0.0)
        seen = set()
        for _ in range(self.max_active_set_changes):
            key = active.tobytes()
            if key in seen:
                return None
            seen.add(key)

            solution = self._solve_kkt(instance, A[active], b[active])
            if solution is None:
                return None
            u_new, lam_active, nu = solution
            lam_full = np.zeros(A.shape[0])
            lam_full[active] = lam_active

            violation = A @ u_new - b
            violation[active] = -np.inf
            feasibility_tol = tol * (1.0 + _inf(b))
            if lam_active.size and lam_active.min() < -tol:
                drop = np.flatnonzero(active)[int(np.argmin(lam_active))]
                active[drop] = False
                continue
            if violation.size and violation.max() > feasibility_tol:
                active[int(np.argmax(violation))] = True
                continue
            return self._result(instance, u_new, np.maximum(lam_full, 0.0), nu, tol, "active-set polish")
        return None

    def _solve_kkt(self, instance, A_act, b_act):
        n = instance.n
        m_a = A_act.shape[0]
        m_e = instance.H.shape[0]
        constraint_rows = np.vstack([A_act, instance.H])
        size = n + m_a + m_e
        K = np.zeros((size, size))
        K[:n, :n] = instance.Q
        K[:n, n:] = constraint_rows.T
        K[n:, :n] = constraint_rows
        rhs = np.concatenate([-instance.c, b_act, instance.g])

        delta = self.kkt_regularization * max(1.0, _inf(K))
        K_reg = K.copy()
        K_reg[np.arange(n), np.arange(n)] += delta
        K_reg[np.arange(n, size), np.arange(n, size)] -= delta
        try:
            factor = sla.lu_factor(K_reg, check_finite=False)
        except (ValueError, sla.LinAlgError):
            return None
        x = sla.lu_solve(factor, rhs)
        for _ in range(self.max_refinements):
            residual = rhs - K @ x
            if _inf(residual) <= 1e-15 * (1.0 + _inf(rhs)):
                break
            x = x + sla.lu_solve(factor, residual)
        if not np.all(np.isfinite(x)):
            return None
        return x[:n], x[n:n + m_a], x[n + m_a:]

    # ------------------------------------------------------------------
    # Penalty minimisation for the augmented Lagrangian
    # ------------------------------------------------------------------

    def minimize_penalty(
        self,
        Q: np.ndarray,
        A: np.ndarray,
        b: np.ndarray,
        nu: np.ndarray,
        rho: float,
        slack_rows: np.ndarray,
        u0: Optional[np.ndarray] = None,
        regularization: float = 0.0,
        max_iterations: int = 200,
    ) -> PenaltySolve:
        """
        Minimise 1/2 u'Qu + nu'(Au + Es - b) + rho/2 ||Au + Es - b||^2 over u and s >= 0.

        E places one unit slack on every row flagged in slack_rows. With
        a = Au - b + nu/rho the optimal slack is max(0, -a), which leaves a
        convex piecewise quadratic in u.
        """
        Q = np.asarray(Q, dtype=float)
        A = np.asarray(A, dtype=float)
        slack_rows = np.asarray(slack_rows, dtype=bool)
        equality = ~slack_rows
        n = Q.shape[0]
        shift = np.asarray(b, dtype=float) - np.asarray(nu, dtype=float) / rho
        nu_term = float(nu @ nu) / (2.0 * rho)

        A_sparse = sp.csr_matrix(A)

        def evaluate(x):
            a = A_sparse @ x - shift
            w = np.where(slack_rows, np.maximum(a, 0.0), a)
            return a, w, 0.5 * float(x @ Q @ x) + 0.5 * rho * float(w @ w) - nu_term

        x = np.zeros(n) if u0 is None or len(u0) != n else np.asarray(u0, dtype=float).copy()
        a, w, value = evaluate(x)
        column_norms = (A * A).sum(axis=0) if A.size else np.zeros(n)
        scale = max(1.0, _inf(np.diag(Q)), rho * _inf(column_norms))
        delta = 1e-13 * scale + regularization

        converged = False
        iteration = 0
        for iteration in range(1, max_iterations + 1):
            active = equality | (a > 0.0)
            gradient = Q @ x + rho * (A_sparse.T @ w)
            A_active = A_sparse[np.flatnonzero(active)]
            hessian = Q + rho * (A_active.T @ A_active).toarray()
            hessian[np.arange(n), np.arange(n)] += delta
            try:
                step = sla.cho_solve(sla.cho_factor(hessian, check_finite=False), -gradient, check_finite=False)
            except (sla.LinAlgError, ValueError):
                step = np.linalg.lstsq(hessian, -gradient, rcond=None)[0]

            slope = float(gradient @ step)
            if not np.isfinite(slope) or slope >= 0.0:
                converged = _inf(gradient) <= 1e-9 * scale
                break

            t = 1.0
            while True:
                a_new, w_new, value_new = evaluate(x + t * step)
                if value_new <= value + 1e-4 * t * slope or t < 1e-12:
                    break
                t *= 0.5

            x = x + t * step
            same_piece = np.array_equal(equality | (a_new > 0.0), active)
            improvement = value - value_new
            a, w, value = a_new, w_new, value_new
            if t == 1.0 and same_piece:
                converged = True
                break
            if improvement <= 1e-15 * max(1.0, abs(value)) and t < 1.0:
                converged = True
                break

        slack = np.where(slack_rows, np.maximum(-a, 0.0), 0.0)
        status = OPTIMAL if converged and np.isfinite(value) else FAILED
        return PenaltySolve(status=status, value=float(value), u=x, slack=slack, iterations=iteration)

    def minimize_penalty_cvxpy(
        self,
        Q: np.ndarray,
        A: np.ndarray,
        b: np.ndarray,
        nu: np.ndarray,
        rho: float,
        slack_rows: np.ndarray,
    ) -> PenaltySolve:
        """Same program as minimize_penalty, solved by cvxpy with explicit slacks."""
        slack_rows = np.asarray(slack_rows, dtype=bool)
        n = Q.shape[0]
        rows = np.flatnonzero(slack_rows)
        x = cp.Variable(n)
        s = cp.Variable(len(rows), nonneg=True)
        E = np.zeros((A.shape[0], len(rows)))
        E[rows, np.arange(len(rows))] = 1.0
        target = np.asarray(b, float) - np.asarray(nu, float) / rho
        objective = 0.5 * cp.quad_form(x, cp.psd_wrap(0.5 * (Q + Q.T))) + 0.5 * rho * cp.sum_squares(A @ x + E @ s - target)
        problem = cp.Problem(cp.Minimize(objective))
        try:
            problem.solve(solver=cp.CLARABEL)
        except cp.SolverError as e:
            logger.warning(f"⚠️ Penalty fallback solve failed: {e}")
            return PenaltySolve(status=FAILED, value=np.inf, u=np.zeros(n), slack=np.zeros(A.shape[0]), iterations=0)
        if x.value is None:
            return PenaltySolve(status=FAILED, value=np.inf, u=np.zeros(n), slack=np.zeros(A.shape[0]), iterations=0)
        slack = np.zeros(A.shape[0])
        slack[rows] = np.maximum(s.value, 0.0)
        u = np.asarray(x.value, dtype=float)
        residual = A @ u + slack - target
        value = 0.5 * float(u @ Q @ u) + 0.5 * rho * float(residual @ residual) - float(nu @ nu) / (2.0 * rho)
        return PenaltySolve(status=OPTIMAL, value=value, u=u, slack=slack, iterations=0)


# Global solver instance
qp_solver = None


def get_qp_solver() -> QPSolver:
    """
    Get or create the shared QP solver.

    Returns:
        QPSolver configured from GRIPPER_QP_TOLERANCE when set
    """
    global qp_solver
    if qp_solver is None:
        tolerance = float(os.getenv("GRIPPER_QP_TOLERANCE", "1e-8") or 1e-8)
        qp_solver = QPSolver(tolerance=tolerance)
        logger.debug(f"QP solver initialised (tolerance={tolerance:.1e})")
    return qp_solver
