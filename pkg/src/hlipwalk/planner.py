"""Receding-horizon footstep planning on the 3D H-LIP.

Decision vector layout, for horizon steps ``k = 1..N`` (block ``k-1``)::

    [x_k (3), y_k (3), u^x_k, u^y_k]        -> 8 N variables

where ``x_k``/``y_k`` are the pre-impact sagittal/lateral H-LIP states reached
after applying ``u_k`` at the impact that follows the anchor state (for
``k = 1``) or ``x_{k-1}``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .hlip import HlipParams, S2SMatrices, s2s_matrices
from .paths import Path
from .qp import QpProblem, QpSolution, Status, solve_obstacle_scp, solve_qp

log = logging.getLogger(__name__)

LEFT, RIGHT = "left", "right"


def other_leg(stance: str) -> str:
    return RIGHT if stance == LEFT else LEFT


@dataclass(frozen=True)
class StepConstraints:
    """Step-size limits in the heading frame.

    The lateral bounds are magnitudes for a step that lands the left foot
    (``s_w`` positive, to the left of the current stance foot); steps landing
    the right foot use the mirrored interval ``[-s_w_max, -s_w_min]``.
    """

    s_l_min: float = -0.5
    s_l_max: float = 0.5
    s_w_min: float = 0.10
    s_w_max: float = 0.35

    def __post_init__(self):
        if self.s_l_min > self.s_l_max:
            raise ValueError(f"s_l_min {self.s_l_min} exceeds s_l_max {self.s_l_max}")
        if self.s_w_min > self.s_w_max:
            raise ValueError(f"s_w_min {self.s_w_min} exceeds s_w_max {self.s_w_max}")
        if not self.s_w_min > 0:
            raise ValueError(f"s_w_min must be positive so feet never cross, got {self.s_w_min}")

    def width_bounds(self, landing: str) -> tuple[float, float]:
        if landing == LEFT:
            return self.s_w_min, self.s_w_max
        return -self.s_w_max, -self.s_w_min


@dataclass(frozen=True)
class MpcConfig:
    N: int = 8
    alpha: float = 0.1
    constraints: StepConstraints = field(default_factory=StepConstraints)
    w_pos: float = 1.0
    w_vel: float = 1.0
    tol: float = 1e-8
    max_iter: int = 2000
    max_outer: int = 10
    obstacle_margin: float = 0.15
    reanchor: bool = False

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N (horizon) must be >= 1, got {self.N}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")


@dataclass
class MpcPlan:
    """Solution of one receding-horizon problem.

    ``x_now``/``y_now`` are the anchor (current-step) H-LIP states, ``u_x[0]``
    and ``u_y[0]`` the step sizes to apply now, and ``x_pred[k]`` the state
    reached after ``u[k]``.
    """

    t0: float
    stance: str
    x_now: np.ndarray
    y_now: np.ndarray
    u_x: np.ndarray
    u_y: np.ndarray
    x_pred: np.ndarray
    y_pred: np.ndarray
    objective: float
    solve_time: float
    status: str = "optimal"
    z: np.ndarray | None = None

    @property
    def u_now(self) -> tuple[float, float]:
        return float(self.u_x[0]), float(self.u_y[0])


def rotate_to_heading(u_x: float, u_y: float, theta: float) -> tuple[float, float]:
    """Step length ``s_l`` and width ``s_w`` of a global step in the heading frame."""
    c, s = math.cos(theta), math.sin(theta)
    return u_x * c + u_y * s, -u_x * s + u_y * c


def _idx(k: int) -> dict:
    b = 8 * k
    return {"x": slice(b, b + 3), "y": slice(b + 3, b + 6), "ux": b + 6, "uy": b + 7}


def position_selectors(N: int) -> list[np.ndarray]:
    """Matrices picking ``(c^x_k, c^y_k)`` out of the decision vector."""
    out = []
    for k in range(N):
        S = np.zeros((2, 8 * N))
        S[0, 8 * k] = 1.0
        S[1, 8 * k + 3] = 1.0
        out.append(S)
    return out


def _const_term(refs, cfg) -> float:
    return sum(cfg.w_pos * float(r.r @ r.r) + cfg.w_vel * float(r.rdot @ r.rdot) for r in refs)


def build_mpc_qp(x_now, y_now, params: HlipParams, matrices: S2SMatrices, path: Path,
                 t0: float, cfg: MpcConfig, stance: str) -> QpProblem:
    """Assemble the footstep QP anchored at the current pre-impact states.

    The cost is ``sum_k w_pos |c_k - r(t_k)|^2 + w_vel |v_k - rdot(t_k)|^2 +
    alpha |u_k|^2`` with ``t_k = t0 + k T_sum``, written as ``1/2 z'Hz + f'z``
    (the constant term is dropped).
    """
    if stance not in (LEFT, RIGHT):
        raise ValueError(f"stance must be 'left' or 'right', got {stance!r}")
    N = cfg.N
    n = 8 * N
    A, B = matrices.A, matrices.B[:, 0]
    H = np.zeros((n, n))
    f = np.zeros(n)
    A_eq = np.zeros((6 * N, n))
    b_eq = np.zeros(6 * N)
    A_in = np.zeros((2 * N, n))
    lb = np.zeros(2 * N)
    ub = np.zeros(2 * N)
    cons = cfg.constraints
    landing = other_leg(stance)
    x_now = np.asarray(x_now, dtype=float)
    y_now = np.asarray(y_now, dtype=float)

    for k in range(N):
        ix = _idx(k)
        ref = path.sample(t0 + (k + 1) * params.T_sum)
        for plane, sl, u in (("x", ix["x"], ix["ux"]), ("y", ix["y"], ix["uy"])):
            axis = 0 if plane == "x" else 1
            c_i, v_i = sl.start, sl.start + 2
            H[c_i, c_i] += 2 * cfg.w_pos
            f[c_i] -= 2 * cfg.w_pos * ref.r[axis]
            H[v_i, v_i] += 2 * cfg.w_vel
            f[v_i] -= 2 * cfg.w_vel * ref.rdot[axis]
            H[u, u] += 2 * cfg.alpha

            rows = slice(6 * k + 3 * axis, 6 * k + 3 * axis + 3)
            A_eq[rows, sl] = np.eye(3)
            A_eq[rows, u] = -B
            if k == 0:
                b_eq[rows] = A @ (x_now if plane == "x" else y_now)
            else:
                prev = _idx(k - 1)[plane]
                A_eq[rows, prev] = -A

        c, s = math.cos(ref.theta), math.sin(ref.theta)
        A_in[2 * k, ix["ux"]], A_in[2 * k, ix["uy"]] = c, s
        lb[2 * k], ub[2 * k] = cons.s_l_min, cons.s_l_max
        A_in[2 * k + 1, ix["ux"]], A_in[2 * k + 1, ix["uy"]] = -s, c
        lb[2 * k + 1], ub[2 * k + 1] = cons.width_bounds(landing)
        landing = other_leg(landing)

    return QpProblem(H, f, A_eq, b_eq, A_in, lb, ub)


def unpack(z, N: int):
    Z = np.asarray(z).reshape(N, 8)
    return Z[:, 0:3].copy(), Z[:, 3:6].copy(), Z[:, 6].copy(), Z[:, 7].copy()


def rollout(x0, u_seq, matrices: S2SMatrices) -> np.ndarray:
    out, x = [], np.asarray(x0, dtype=float)
    for u in u_seq:
        x = matrices.A @ x + matrices.B[:, 0] * u
        out.append(x)
    return np.array(out)


class FootstepPlanner:
    """Stateful receding-horizon planner driving an internal H-LIP reference.

    Each :meth:`mpc_step` solves the QP anchored at the internal H-LIP
    pre-impact states, applies the first step sizes to the internal model,
    and toggles the stance leg.
    """

    def __init__(self, params: HlipParams, path: Path, cfg: MpcConfig | None = None,
                 x0=None, y0=None, stance: str = RIGHT, obstacles=()):
        self.params = params
        self.matrices = s2s_matrices(params)
        self.path = path
        self.cfg = cfg or MpcConfig()
        if x0 is None or y0 is None:
            ref = path.sample(0.0)
            x0, y0 = stepping_in_place_state(params, ref.r, ref.theta,
                                             self.cfg.constraints.s_w_min, other_leg(stance))
        self.x = np.asarray(x0, dtype=float).copy()
        self.y = np.asarray(y0, dtype=float).copy()
        self.stance = stance
        self.obstacles = [(np.asarray(p, dtype=float), float(d)) for p, d in obstacles]
        self.prev_plan: MpcPlan | None = None

    def reanchor(self, x, y) -> None:
        self.x = np.asarray(x, dtype=float).copy()
        self.y = np.asarray(y, dtype=float).copy()

    def solve(self, t0: float) -> MpcPlan:
        cfg = self.cfg
        N = cfg.N
        qp = build_mpc_qp(self.x, self.y, self.params, self.matrices, self.path, t0, cfg,
                          self.stance)
        refs = [self.path.sample(t0 + (k + 1) * self.params.T_sum) for k in range(N)]
        tic = time.perf_counter()
        if self.obstacles:
            init = None
            if self.prev_plan is not None and self.prev_plan.z is not None:
                init = self._shifted_z(self.prev_plan)
            obstacles = [(p, d + cfg.obstacle_margin) for p, d in self.obstacles]
            sol = solve_obstacle_scp(qp, obstacles, position_selectors(N), init=init,
                                     max_outer=cfg.max_outer, references=[r.r for r in refs],
                                     tol=cfg.tol, max_iter=cfg.max_iter)
        else:
            warm = None if self.prev_plan is None or self.prev_plan.z is None \
                else self._shifted_z(self.prev_plan)
            sol = solve_qp(qp, warm_start=warm, tol=cfg.tol, max_iter=cfg.max_iter)
        elapsed = time.perf_counter() - tic

        if sol.status is Status.OPTIMAL:
            return self._plan_from(sol, t0, elapsed, _const_term(refs, cfg))
        return self._fallback(t0, elapsed, sol)

    def mpc_step(self, t0: float) -> MpcPlan:
        plan = self.solve(t0)
        self.x = plan.x_pred[0].copy()
        self.y = plan.y_pred[0].copy()
        self.stance = other_leg(self.stance)
        self.prev_plan = plan
        return plan

    def _plan_from(self, sol: QpSolution, t0, elapsed, const) -> MpcPlan:
        xs, ys, ux, uy = unpack(sol.z, self.cfg.N)
        return MpcPlan(t0, self.stance, self.x.copy(), self.y.copy(), ux, uy, xs, ys,
                       sol.objective + const, elapsed, "optimal", sol.z.copy())

    def _shifted_z(self, plan: MpcPlan) -> np.ndarray:
        ux = np.append(plan.u_x[1:], plan.u_x[-1] if len(plan.u_x) > 1 else 0.0)
        uy = np.append(plan.u_y[1:], -plan.u_y[-1])
        xs = rollout(self.x, ux, self.matrices)
        ys = rollout(self.y, uy, self.matrices)
        return np.column_stack([xs, ys, ux, uy]).reshape(-1)

    def _fallback(self, t0, elapsed, sol) -> MpcPlan:
        log.warning("MPC at t0=%.3f returned %s; reusing shifted previous plan",
                    t0, sol.status.value)
        if self.prev_plan is None:
            w_lo, w_hi = self.cfg.constraints.width_bounds(other_leg(self.stance))
            ux = np.zeros(self.cfg.N)
            uy = np.array([(w_lo + w_hi) / 2 * (-1) ** k for k in range(self.cfg.N)])
            z = np.column_stack([rollout(self.x, ux, self.matrices),
                                 rollout(self.y, uy, self.matrices), ux, uy]).reshape(-1)
        else:
            z = self._shifted_z(self.prev_plan)
        xs, ys, ux, uy = unpack(z, self.cfg.N)
        return MpcPlan(t0, self.stance, self.x.copy(), self.y.copy(), ux, uy, xs, ys,
                       float("nan"), elapsed, f"fallback:{sol.status.value}", z)


def plan_dynamics_residual(plan: MpcPlan, matrices: S2SMatrices) -> float:
    xs = rollout(plan.x_now, plan.u_x, matrices)
    ys = rollout(plan.y_now, plan.u_y, matrices)
    return float(max(np.abs(xs - plan.x_pred).max(), np.abs(ys - plan.y_pred).max()))


def stepping_in_place_state(params: HlipParams, center, heading: float, width: float,
                            landing: str) -> tuple[np.ndarray, np.ndarray]:
    """Pre-impact (x, y) states of a symmetric stepping-in-place gait.

    ``landing`` is the leg placed by the next step. The lateral motion is the
    two-step periodic solution for alternating widths ``±width``; the pre-impact
    positions of consecutive steps average to ``center``.
    """
    M = s2s_matrices(params)
    A2, B2 = M.A[1:, 1:], M.B[1:, 0]
    u0 = width if landing == LEFT else -width
    pv = np.linalg.solve(np.eye(2) - A2 @ A2, (A2 @ B2 - B2) * u0)
    c_shift = M.A[0, 1:] @ pv + M.B[0, 0] * u0
    lat = np.array([-0.5 * c_shift, pv[0], pv[1]])
    normal = np.array([-math.sin(heading), math.cos(heading)])
    center = np.asarray(center, dtype=float)
    x = normal[0] * lat + np.array([center[0], 0.0, 0.0])
    y = normal[1] * lat + np.array([center[1], 0.0, 0.0])
    return x, y
