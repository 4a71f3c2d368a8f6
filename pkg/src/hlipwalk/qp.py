"""Dense convex QP solver and sequential convexification for keep-out zones.

Problem form::

    minimize    1/2 z' H z + f' z
    subject to  A_eq z = b_eq
                lb <= A_in z <= ub

Multiplier convention: stationarity reads
``H z + f - A_eq' y_eq - A_in' y_in = 0``, so an active lower bound has
``y_in > 0`` and an active upper bound has ``y_in < 0``.

The solver runs ADMM on the stacked constraint matrix and, once the residuals
are small, guesses the active set and solves the reduced KKT system exactly
("polishing"). A solution is declared optimal only when its KKT residual is
below ``tol``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max-iterations"


@dataclass(frozen=True)
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_in: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = H.shape[0]
        if H.shape != (n, n):
            raise ValueError(f"H must be square, got {H.shape}")
        if not np.allclose(H, H.T, atol=1e-10 * max(1.0, np.abs(H).max())):
            raise ValueError("H must be symmetric")
        f = np.asarray(self.f, dtype=float).reshape(-1)
        if f.size != n:
            raise ValueError(f"f has length {f.size}, expected {n}")
        A_eq = _rows(self.A_eq, n)
        b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).reshape(-1)
        if b_eq.size != A_eq.shape[0]:
            raise ValueError("b_eq does not match A_eq")
        A_in = _rows(self.A_in, n)
        m = A_in.shape[0]
        lb = np.full(m, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        ub = np.full(m, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1)
        if lb.size != m or ub.size != m:
            raise ValueError("lb/ub do not match A_in")
        if np.any(lb > ub):
            raise ValueError("lb must not exceed ub")
        for name, val in (("H", 0.5 * (H + H.T)), ("f", f), ("A_eq", A_eq), ("b_eq", b_eq),
                          ("A_in", A_in), ("lb", lb), ("ub", ub)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.f @ z)

    def with_inequalities(self, A, lb, ub) -> "QpProblem":
        """Copy with extra rows appended to the inequality block."""
        A = _rows(A, self.n)
        return replace(self, A_in=np.vstack([self.A_in, A]),
                       lb=np.concatenate([self.lb, np.asarray(lb, dtype=float).reshape(-1)]),
                       ub=np.concatenate([self.ub, np.asarray(ub, dtype=float).reshape(-1)]))


def _rows(M, n):
    if M is None:
        return np.zeros((0, n))
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros((0, n))
    M = np.atleast_2d(M)
    if M.shape[1] != n:
        raise ValueError(f"constraint matrix has {M.shape[1]} columns, expected {n}")
    return M


@dataclass
class QpSolution:
    z: np.ndarray
    y_eq: np.ndarray
    y_in: np.ndarray
    status: Status
    iterations: int
    kkt_residual: float
    objective: float = float("nan")
    outer_iterations: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def kkt_residual(p: QpProblem, s: QpSolution) -> float:
    """Max-abs of stationarity, primal violation and complementarity residuals."""
    z, y_eq, y_in = s.z, s.y_eq, s.y_in
    stat = p.H @ z + p.f - p.A_eq.T @ y_eq - p.A_in.T @ y_in
    res = [np.abs(stat).max(initial=0.0)]
    if p.A_eq.shape[0]:
        res.append(np.abs(p.A_eq @ z - p.b_eq).max())
    if p.A_in.shape[0]:
        Az = p.A_in @ z
        res.append(np.max(np.maximum(p.lb - Az, 0.0), initial=0.0))
        res.append(np.max(np.maximum(Az - p.ub, 0.0), initial=0.0))
        pos, neg = np.maximum(y_in, 0.0), np.maximum(-y_in, 0.0)
        with np.errstate(invalid="ignore"):
            slack_lo = np.where(np.isfinite(p.lb), np.abs(Az - p.lb), 1.0)
            slack_hi = np.where(np.isfinite(p.ub), np.abs(p.ub - Az), 1.0)
        res.append(np.max(pos * slack_lo, initial=0.0))
        res.append(np.max(neg * slack_hi, initial=0.0))
    return float(max(res))


class _Admm:
    def __init__(self, p: QpProblem, rho=0.1, sigma=1e-6, alpha=1.6):
        self.p = p
        self.A = np.vstack([p.A_eq, p.A_in])
        self.l = np.concatenate([p.b_eq, p.lb])
        self.u = np.concatenate([p.b_eq, p.ub])
        self.is_eq = np.concatenate([np.ones(p.A_eq.shape[0], bool),
                                     np.isclose(p.lb, p.ub, rtol=0, atol=1e-12)])
        self.sigma, self.alpha = sigma, alpha
        self.set_rho(rho)

    def set_rho(self, rho):
        self.rho = rho
        self.rho_vec = np.where(self.is_eq, 1e3 * rho, rho)
        M = self.p.H + self.sigma * np.eye(self.p.n) + self.A.T @ (self.rho_vec[:, None] * self.A)
        self.factor = cho_factor(M)

    def step(self, x, z, y):
        rhs = self.sigma * x - self.p.f + self.A.T @ (self.rho_vec * z - y)
        xt = cho_solve(self.factor, rhs)
        zt = self.A @ xt
        x = self.alpha * xt + (1 - self.alpha) * x
        zr = self.alpha * zt + (1 - self.alpha) * z
        z_new = np.clip(zr + y / self.rho_vec, self.l, self.u)
        y = y + self.rho_vec * (zr - z_new)
        return x, z_new, y


def _split(y, m_eq):
    return y[:m_eq], y[m_eq:]


def _polish(p: QpProblem, admm: _Admm, z_hat, y, tol, max_corrections: int = 25):
    """Solve the KKT system on a guessed active set, then correct the guess.

    The initial guess comes from the ADMM iterate. Corrections add violated
    inactive constraints and release active ones whose multiplier has the
    wrong sign. Returns None when no consistent active set is found.
    """
    m_eq = p.A_eq.shape[0]
    A, l, u = admm.A, admm.l, admm.u
    side = np.zeros(A.shape[0], dtype=int)  # -1 lower, +1 upper, 0 inactive
    side[z_hat - l < -y] = -1
    side[(u - z_hat < y) & (side == 0)] = 1
    side[admm.is_eq] = -1
    cand = None
    for _ in range(max_corrections):
        sol = _solve_active(p, A, np.where(side > 0, u, l), np.flatnonzero(side))
        if sol is None:
            return cand
        x, y_act = sol
        y_full = np.zeros(A.shape[0])
        y_full[np.flatnonzero(side)] = y_act
        y_eq, y_in = _split(-y_full, m_eq)
        cand = QpSolution(x, y_eq, y_in, Status.OPTIMAL, 0, 0.0)
        cand.kkt_residual = kkt_residual(p, cand)
        if cand.kkt_residual <= tol:
            return cand
        Ax = A @ x
        viol = np.maximum(l - Ax, Ax - u)
        viol[side != 0] = -np.inf
        if viol.size and viol.max() > tol:
            new = viol > tol
            side[new & (Ax < l)] = -1
            side[new & (Ax > u)] = 1
            continue
        # OSQP sign: lower-active rows need y <= 0, upper-active rows y >= 0
        wrong = np.where(side < 0, y_full, np.where(side > 0, -y_full, -np.inf))
        wrong[admm.is_eq] = -np.inf
        if wrong.size and wrong.max() > 0:
            side[int(np.argmax(wrong))] = 0
            continue
        return cand
    return cand


def _solve_active(p: QpProblem, A, bounds, act):
    n, k = p.n, act.size
    Aa = A[act]
    K = np.block([[p.H, Aa.T], [Aa, np.zeros((k, k))]])
    delta = 1e-9
    Kreg = K + np.diag(np.concatenate([np.full(n, delta), np.full(k, -delta)]))
    rhs = np.concatenate([-p.f, bounds[act]])
    try:
        lu = lu_factor(Kreg)
    except (ValueError, np.linalg.LinAlgError):
        return None
    sol = lu_solve(lu, rhs)
    for _ in range(8):
        r = rhs - K @ sol
        if np.abs(r).max() < 1e-15:
            break
        sol = sol + lu_solve(lu, r)
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:n], sol[n:]


def solve_qp(p: QpProblem, warm_start=None, tol: float = 1e-8, max_iter: int = 2000,
             rho: float = 0.1) -> QpSolution:
    """Solve a convex QP. Deterministic for identical inputs and warm start."""
    try:
        np.linalg.cholesky(p.H + 1e-9 * max(1.0, np.abs(p.H).max()) * np.eye(p.n))
    except np.linalg.LinAlgError:
        raise ValueError("H is not positive semidefinite") from None

    admm = _Admm(p, rho=rho)
    m_eq = p.A_eq.shape[0]
    x = np.zeros(p.n) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    z = np.clip(admm.A @ x, admm.l, admm.u)
    y = np.zeros(admm.A.shape[0])
    y_prev = y
    best = None
    check_every = 10
    last_polish_res = np.inf

    for it in range(1, max_iter + 1):
        x, z, y = admm.step(x, z, y)
        if it % check_every and it != max_iter:
            continue

        Ax = admm.A @ x
        r_prim = np.abs(Ax - z).max(initial=0.0)
        r_dual = np.abs(p.H @ x + p.f + admm.A.T @ y).max(initial=0.0)
        scale_p = max(np.abs(Ax).max(initial=0.0), np.abs(z).max(initial=0.0), 1.0)
        scale_d = max(np.abs(p.f).max(initial=0.0), np.abs(p.H @ x).max(initial=0.0), 1.0)

        if _certifies_infeasible(admm, y - y_prev):
            y_eq, y_in = _split(-y, m_eq)
            sol = QpSolution(x, y_eq, y_in, Status.INFEASIBLE, it, np.inf)
            sol.kkt_residual = kkt_residual(p, sol)
            return sol
        y_prev = y

        res = max(r_prim / scale_p, r_dual / scale_d)
        if res < 1e-2 and res < 0.5 * last_polish_res:
            last_polish_res = res
            cand = _polish(p, admm, z, y, tol)
            if cand is not None and cand.kkt_residual <= tol:
                cand.iterations = it
                cand.objective = p.objective(cand.z)
                return cand
        y_eq, y_in = _split(-y, m_eq)
        rec = QpSolution(x.copy(), y_eq, y_in, Status.MAX_ITERATIONS, it, np.inf)
        rec.kkt_residual = kkt_residual(p, rec)
        if rec.kkt_residual <= tol:
            rec.status = Status.OPTIMAL
            rec.objective = p.objective(rec.z)
            return rec
        if best is None or rec.kkt_residual < best.kkt_residual:
            best = rec

        if it % (5 * check_every) == 0:
            ratio = np.sqrt((r_prim / scale_p) / max(r_dual / scale_d, 1e-30))
            new_rho = float(np.clip(admm.rho * ratio, 1e-6, 1e6))
            if new_rho > 5 * admm.rho or new_rho < admm.rho / 5:
                admm.set_rho(new_rho)

    best.iterations = max_iter
    best.objective = p.objective(best.z)
    return best


def _certifies_infeasible(admm: _Admm, dy, eps=1e-7) -> bool:
    norm = np.abs(dy).max(initial=0.0)
    if norm < 1e-10:
        return False
    if np.abs(admm.A.T @ dy).max(initial=0.0) > eps * norm:
        return False
    pos, neg = np.maximum(dy, 0.0), np.minimum(dy, 0.0)
    if np.any((pos > eps * norm) & ~np.isfinite(admm.u)) or \
            np.any((neg < -eps * norm) & ~np.isfinite(admm.l)):
        return False
    u = np.where(np.isfinite(admm.u), admm.u, 0.0)
    l = np.where(np.isfinite(admm.l), admm.l, 0.0)
    return float(u @ pos + l @ neg) < -eps * norm


def solve_obstacle_scp(p: QpProblem, obstacles, position_selector, init=None,
                       max_outer: int = 10, references=None, tol: float = 1e-8,
                       max_iter: int = 2000, step_tol: float = 1e-6) -> QpSolution:
    """Keep-out constraints ``|S_k z - p_obs| >= d`` by sequential linearization.

    ``position_selector`` is a list of ``(2, n)`` matrices ``S_k``. Each round
    replaces the keep-out disc by the tangent half-space at the projection of
    the current iterate, ``n' (S_k z - p_obs) >= d``. The half-space lies
    outside the disc, so every accepted iterate satisfies the original
    constraint. ``references`` (optional, one 2-vector per ``S_k``) breaks the
    tie when an iterate sits exactly on an obstacle center.
    """
    obstacles = [(np.asarray(pos, dtype=float), float(d)) for pos, d in obstacles]
    if not obstacles:
        return solve_qp(p, warm_start=init, tol=tol, max_iter=max_iter)
    for _, d in obstacles:
        if d <= 0:
            raise ValueError(f"obstacle clearance must be positive, got {d}")
    if init is None:
        first = solve_qp(p, tol=tol, max_iter=max_iter)
        if first.status is Status.INFEASIBLE:
            return first
        init = first.z
    z = np.asarray(init, dtype=float)
    sol = None
    for outer in range(1, max_outer + 1):
        rows, lbs = [], []
        for k, S in enumerate(position_selector):
            S = np.asarray(S, dtype=float)
            ck = S @ z
            for pos, d in obstacles:
                nvec = _keep_out_normal(ck, pos, None if references is None else references[k])
                rows.append(nvec @ S)
                lbs.append(d + nvec @ pos)
        sub = p.with_inequalities(np.array(rows), lbs, np.full(len(lbs), np.inf))
        sol = solve_qp(sub, warm_start=z, tol=tol, max_iter=max_iter)
        sol.outer_iterations = outer
        if sol.status is not Status.OPTIMAL:
            return sol
        moved = np.abs(sol.z - z).max()
        z = sol.z
        if moved < step_tol:
            break
    # report multipliers of the original rows only; the linearized rows are appended
    m = p.A_in.shape[0]
    sol.extras["keep_out_duals"] = sol.y_in[m:]
    sol.y_in = sol.y_in[:m]
    sol.extras["clearances"] = [
        float(np.linalg.norm(np.asarray(S) @ sol.z - pos) - d)
        for S in position_selector for pos, d in obstacles]
    return sol


def _keep_out_normal(ck, pos, ref):
    diff = ck - pos
    dist = np.linalg.norm(diff)
    if dist > 1e-12:
        return diff / dist
    if ref is not None:
        diff = np.asarray(ref, dtype=float) - pos
        dist = np.linalg.norm(diff)
        if dist > 1e-12:
            return diff / dist
    return np.array([0.0, 1.0])
