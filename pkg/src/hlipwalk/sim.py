"""Reduced-order surrogate biped executing H-LIP based stepping.

The surrogate is a point-mass walker with massless legs. Its deviations from
the H-LIP are explicit and individually switchable:

- a prescribed COM height oscillation during single support, so the
  effective pendulum frequency varies over the step,
- a fractional loss of horizontal COM velocity at touchdown,
- Gaussian error on the realized foot placement.

With all three at zero the surrogate reproduces the H-LIP step-to-step map.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .hlip import HlipParams, dlqr_gain, s2s_matrices, ssp_flow
from .paths import Path
from .planner import FootstepPlanner, MpcPlan, other_leg
from .zonotope import Zonotope, contains, estimate_w, mrpi_outer

log = logging.getLogger(__name__)

SSP, DSP = "SSP", "DSP"


class SimulationDiverged(RuntimeError):
    """The walker fell; carries the partial logs."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class InvalidPhaseError(RuntimeError):
    pass


@dataclass(frozen=True)
class SurrogateModelConfig:
    height_oscillation_amplitude: float = 0.02
    impact_velocity_loss: float = 0.03
    swing_tracking_error_std: float = 0.005
    mass: float = 33.0
    rng_seed: int = 0
    max_leg_offset: float = 0.8

    def __post_init__(self):
        if self.height_oscillation_amplitude < 0:
            raise ValueError("height_oscillation_amplitude must be non-negative")
        if not 0.0 <= self.impact_velocity_loss <= 0.2:
            raise ValueError("impact_velocity_loss must lie in [0, 0.2]")
        if self.swing_tracking_error_std < 0:
            raise ValueError("swing_tracking_error_std must be non-negative")
        if not self.mass > 0:
            raise ValueError("mass must be positive")

    @classmethod
    def exact(cls, **kw) -> "SurrogateModelConfig":
        """All deviations switched off."""
        return cls(height_oscillation_amplitude=0.0, impact_velocity_loss=0.0,
                   swing_tracking_error_std=0.0, **kw)


@dataclass(frozen=True)
class PushEvent:
    t_start: float
    duration: float
    force: tuple[float, float]

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("push duration must be positive")

    def accel(self, t: float, mass: float) -> tuple[float, float]:
        if self.t_start <= t < self.t_start + self.duration:
            return self.force[0] / mass, self.force[1] / mass
        return 0.0, 0.0

    def mean_accel(self, t: float, h: float, mass: float) -> tuple[float, float]:
        """Acceleration averaged over ``[t, t + h)``, so each tick gets the exact impulse."""
        overlap = min(t + h, self.t_start + self.duration) - max(t, self.t_start)
        if overlap <= 0.0:
            return 0.0, 0.0
        frac = overlap / h
        return frac * self.force[0] / mass, frac * self.force[1] / mass


@dataclass
class PreImpact:
    """Robot and H-LIP quantities at one pre-impact instant (global planes)."""

    k: int
    t: float
    x_robot: np.ndarray
    y_robot: np.ndarray
    x_hlip: np.ndarray
    y_hlip: np.ndarray
    u_hlip: np.ndarray
    u_cmd: np.ndarray
    u_real: np.ndarray
    stance: str


@dataclass
class StepLog:
    """One completed step ``k -> k+1``.

    ``w_x``/``w_y`` are ``x_{k+1} - A x_k - B u_cmd_k`` per plane.
    """

    pre: PreImpact
    x_next: np.ndarray
    y_next: np.ndarray
    w_x: np.ndarray
    w_y: np.ndarray

    @property
    def e_x(self) -> np.ndarray:
        return self.pre.x_robot - self.pre.x_hlip

    @property
    def e_y(self) -> np.ndarray:
        return self.pre.y_robot - self.pre.y_hlip


@dataclass
class SurrogateBipedState:
    com: np.ndarray
    vel: np.ndarray
    stance_foot: np.ndarray
    stance: str
    heading: float
    phase: str = SSP
    phase_time: float = 0.0
    swing_start: np.ndarray = field(default_factory=lambda: np.zeros(2))
    swing_yaw_start: float = 0.0
    swing_foot: np.ndarray = field(default_factory=lambda: np.zeros(2))
    swing_yaw: float = 0.0
    t: float = 0.0
    pending: PreImpact | None = None

    def planar(self, axis: int) -> np.ndarray:
        return np.array([self.com[axis], self.com[axis] - self.stance_foot[axis], self.vel[axis]])

    def copy(self) -> "SurrogateBipedState":
        return replace(self, com=self.com.copy(), vel=self.vel.copy(),
                       stance_foot=self.stance_foot.copy(), swing_start=self.swing_start.copy(),
                       swing_foot=self.swing_foot.copy())


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def smooth_blend(t: float, T: float) -> float:
    """Smoothstep from 0 to 1, reaching 1 at ``0.9 T`` and held there."""
    s = min(max(t / (0.9 * T), 0.0), 1.0)
    return s * s * (3.0 - 2.0 * s)


def desired_step_sizes(robot_x, robot_y, plan: MpcPlan, K) -> tuple[float, float]:
    K = np.ravel(K)
    ux = plan.u_x[0] + K @ (np.asarray(robot_x) - plan.x_now)
    uy = plan.u_y[0] + K @ (np.asarray(robot_y) - plan.y_now)
    return float(ux), float(uy)


def swing_foot_target(state: SurrogateBipedState, u_des, t: float, T_ssp: float) -> np.ndarray:
    """Swing foot position moving from lift-off toward ``stance_foot + u_des``."""
    if state.phase != SSP:
        raise InvalidPhaseError("swing foot target is only defined in single support")
    c = smooth_blend(t, T_ssp)
    landing = state.stance_foot + np.asarray(u_des, dtype=float)
    return state.swing_start + c * (landing - state.swing_start)


def swing_yaw_target(state: SurrogateBipedState, theta_ref: float, t: float, T_ssp: float) -> float:
    if state.phase != SSP:
        raise InvalidPhaseError("swing yaw target is only defined in single support")
    c = smooth_blend(t, T_ssp)
    return _wrap(state.swing_yaw_start + c * _wrap(theta_ref - state.swing_yaw_start))


def predict_preimpact(planar, t_remaining: float, lam: float) -> np.ndarray:
    """Nominal H-LIP prediction of the pre-impact state from a mid-SSP state."""
    c, p, v = planar
    p1, v1 = ssp_flow(p, v, t_remaining, lam)
    return np.array([c + p1 - p, p1, v1])


class SteppingController:
    """MPC on the H-LIP at every impact plus LQR stepping feedback in SSP."""

    def __init__(self, planner: FootstepPlanner, K):
        self.planner = planner
        self.K = np.ravel(K)
        self.plan: MpcPlan | None = None
        self.plans: list[MpcPlan] = []

    def plan_step(self, t_preimpact: float, robot_x=None, robot_y=None) -> MpcPlan:
        if self.planner.cfg.reanchor and robot_x is not None:
            self.planner.reanchor(robot_x, robot_y)
        self.plan = self.planner.mpc_step(t_preimpact)
        self.plans.append(self.plan)
        return self.plan

    def desired(self, robot_x, robot_y) -> tuple[float, float]:
        return desired_step_sizes(robot_x, robot_y, self.plan, self.K)


class _Recorder:
    def __init__(self, stride: int = 1):
        self.rows: list[tuple] = []
        self.stride = stride
        self._n = 0

    def add(self, t, com, vel, foot, heading, phase):
        if self._n % self.stride == 0:
            self.rows.append((t, com[0], com[1], com[2], vel[0], vel[1], vel[2],
                              foot[0], foot[1], heading, phase))
        self._n += 1


def _check_fall(com, foot, params, model):
    z = com[2]
    if not 0.5 * params.z0 <= z <= 1.5 * params.z0:
        return f"COM height {z:.3f} left [{0.5 * params.z0}, {1.5 * params.z0}]"
    off = math.hypot(com[0] - foot[0], com[1] - foot[1])
    if off > model.max_leg_offset * params.z0:
        return f"COM offset {off:.3f} m from stance foot exceeds leg reach"
    return None


def simulate_step(state: SurrogateBipedState, controller: SteppingController, params: HlipParams,
                  model: SurrogateModelConfig, pushes=(), rng=None, path: Path | None = None,
                  dt: float = 1e-3, recorder: _Recorder | None = None):
    """Advance from one pre-impact instant to the next.

    Touchdown at the pending landing point, double support for ``T_dsp``,
    single support for ``T_ssp`` with the swing foot steered every tick.
    Returns ``(new_state, StepLog)`` for the step that started at ``state``.
    """
    rng = rng if rng is not None else np.random.default_rng(model.rng_seed)
    s = state.copy()
    pre = s.pending
    mass, g, z0 = model.mass, params.g, params.z0
    A_h = model.height_oscillation_amplitude
    matrices = s2s_matrices(params)

    # touchdown: swing foot becomes stance, velocity loss
    old_stance = s.stance_foot.copy()
    old_yaw = s.swing_yaw
    s.stance_foot = s.swing_foot.copy()
    s.swing_start = old_stance
    s.swing_yaw_start = s.heading
    s.swing_yaw = old_yaw
    s.stance = other_leg(s.stance)
    s.vel[:2] *= 1.0 - model.impact_velocity_loss

    t_next = s.t + params.T_sum
    pred_x = _predict_from_post_impact(s, 0, params)
    pred_y = _predict_from_post_impact(s, 1, params)
    plan = controller.plan_step(t_next, pred_x, pred_y)

    px, py = s.com[0] - s.stance_foot[0], s.com[1] - s.stance_foot[1]
    vx, vy = float(s.vel[0]), float(s.vel[1])
    fx, fy = float(s.stance_foot[0]), float(s.stance_foot[1])

    def push_acc(t, h):
        # pushes are held constant over a tick at their tick-average value
        ax = ay = 0.0
        for ev in pushes:
            a, b = ev.mean_accel(t, h, mass)
            ax += a
            ay += b
        return ax, ay

    # double support: flat COM, no horizontal pendulum force, exact per tick
    s.phase, s.phase_time = DSP, 0.0
    n_dsp = int(round(params.T_dsp / dt))
    h = params.T_dsp / n_dsp if n_dsp else 0.0
    for i in range(n_dsp):
        t = s.t + i * h
        ax, ay = push_acc(t, h)
        px += h * vx + 0.5 * h * h * ax
        py += h * vy + 0.5 * h * h * ay
        vx += h * ax
        vy += h * ay
        s.phase_time = (i + 1) * h
        if recorder is not None:
            heading = path.sample(t + h).theta if path is not None else s.heading
            recorder.add(t + h, (fx + px, fy + py, z0), (vx, vy, 0.0), (fx, fy), heading, DSP)
    t_ssp0 = s.t + params.T_dsp

    # single support: variable-height pendulum
    s.phase, s.phase_time = SSP, 0.0
    T = params.T_ssp
    w = 2.0 * math.pi / T

    def lam2(tau):
        z = z0 + A_h * math.sin(w * tau)
        zdd = -A_h * w * w * math.sin(w * tau)
        return (g + zdd) / z

    n_ssp = int(round(T / dt))
    h = T / n_ssp
    lam = params.lam
    K = controller.K
    for i in range(n_ssp):
        tau = i * h
        t = t_ssp0 + tau
        # controller tick: predicted pre-impact state -> desired step -> swing target
        cx, cy = fx + px, fy + py
        rx = predict_preimpact((cx, px, vx), T - tau, lam)
        ry = predict_preimpact((cy, py, vy), T - tau, lam)
        u_des = controller.desired(rx, ry)
        s.phase_time = tau
        s.swing_foot = swing_foot_target(s, u_des, tau, T)
        theta_ref = path.sample(t).theta if path is not None else s.heading
        s.swing_yaw = swing_yaw_target(s, theta_ref, tau, T)

        ax, ay = push_acc(t, h)

        def f(tt, px, py, vx, vy):
            l2 = lam2(tt - t_ssp0)
            return vx, vy, l2 * px + ax, l2 * py + ay

        k1 = f(t, px, py, vx, vy)
        k2 = f(t + h / 2, px + h / 2 * k1[0], py + h / 2 * k1[1], vx + h / 2 * k1[2], vy + h / 2 * k1[3])
        k3 = f(t + h / 2, px + h / 2 * k2[0], py + h / 2 * k2[1], vx + h / 2 * k2[2], vy + h / 2 * k2[3])
        k4 = f(t + h, px + h * k3[0], py + h * k3[1], vx + h * k3[2], vy + h * k3[3])
        px += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        py += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        vx += h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        vy += h / 6 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])

        tau1 = tau + h
        z = z0 + A_h * math.sin(w * tau1)
        zd = A_h * w * math.cos(w * tau1)
        com = (fx + px, fy + py, z)
        if recorder is not None:
            heading = path.sample(t + h).theta if path is not None else s.heading
            recorder.add(t + h, com, (vx, vy, zd), (fx, fy), heading, SSP)
        reason = _check_fall(com, (fx, fy), params, model)
        if reason:
            raise SimulationDiverged(f"fall at t={t + h:.3f}: {reason}")

    s.t = (pre.k + 1) * params.T_sum
    s.phase_time = T
    s.com = np.array([fx + px, fy + py, z0 + A_h * math.sin(w * T)])
    s.vel = np.array([vx, vy, A_h * w * math.cos(w * T)])
    s.heading = path.sample(s.t).theta if path is not None else s.heading

    # pre-impact k+1: final command from the exact state, land with actuation error
    x_next, y_next = s.planar(0), s.planar(1)
    u_cmd = np.array(controller.desired(x_next, y_next))
    noise = rng.normal(0.0, model.swing_tracking_error_std, 2) \
        if model.swing_tracking_error_std > 0 else np.zeros(2)
    s.swing_foot = s.stance_foot + u_cmd + noise
    s.swing_yaw = s.heading
    s.pending = PreImpact(pre.k + 1, s.t, x_next, y_next, plan.x_now.copy(), plan.y_now.copy(),
                          np.array(plan.u_now), u_cmd, s.swing_foot - s.stance_foot, s.stance)

    A, B = matrices.A, matrices.B[:, 0]
    w_x = x_next - A @ pre.x_robot - B * pre.u_cmd[0]
    w_y = y_next - A @ pre.y_robot - B * pre.u_cmd[1]
    return s, StepLog(pre, x_next, y_next, w_x, w_y)


def _predict_from_post_impact(s: SurrogateBipedState, axis: int, params: HlipParams):
    c = s.com[axis]
    p = c - s.stance_foot[axis]
    v = s.vel[axis]
    p1 = p + v * params.T_dsp
    p2, v2 = ssp_flow(p1, v, params.T_ssp, params.lam)
    return np.array([c + p2 - p, p2, v2])


def initial_state(planner: FootstepPlanner, controller: SteppingController, params: HlipParams,
                  model: SurrogateModelConfig, rng, path: Path) -> SurrogateBipedState:
    """Robot at the first pre-impact instant, coinciding with the H-LIP reference."""
    x0, y0 = planner.x.copy(), planner.y.copy()
    stance = planner.stance
    heading = path.sample(0.0).theta
    foot = np.array([x0[0] - x0[1], y0[0] - y0[1]])
    s = SurrogateBipedState(com=np.array([x0[0], y0[0], params.z0]),
                            vel=np.array([x0[2], y0[2], 0.0]), stance_foot=foot, stance=stance,
                            heading=heading, swing_yaw_start=heading, swing_yaw=heading)
    plan = controller.plan_step(0.0)
    u_cmd = np.array(controller.desired(x0, y0))
    noise = rng.normal(0.0, model.swing_tracking_error_std, 2) \
        if model.swing_tracking_error_std > 0 else np.zeros(2)
    s.swing_foot = foot + u_cmd + noise
    s.pending = PreImpact(0, 0.0, x0, y0, plan.x_now.copy(), plan.y_now.copy(),
                          np.array(plan.u_now), u_cmd, s.swing_foot - foot, stance)
    return s


@dataclass
class ScenarioResult:
    trajectory: list[tuple]
    steps: list[StepLog]
    plans: list[MpcPlan]
    W: dict[str, Zonotope] | None
    E: dict[str, Zonotope] | None
    in_E: dict[str, list[bool]]
    summary: dict
    path: Path
    status: str = "ok"
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def w_samples(self, plane: str) -> np.ndarray:
        return np.array([s.w_x if plane == "x" else s.w_y for s in self.steps]).reshape(-1, 3)

    def errors(self, plane: str) -> np.ndarray:
        return np.array([s.e_x if plane == "x" else s.e_y for s in self.steps]).reshape(-1, 3)


def closed_loop_error_sets(Acl, W: dict[str, Zonotope], eps: float = 1e-3) -> dict[str, Zonotope]:
    return {plane: mrpi_outer(Acl, W[plane], eps=eps) for plane in ("x", "y")}


def run_scenario(cfg, W: dict[str, Zonotope] | None = None, stride: int = 1) -> ScenarioResult:
    """Walk the configured path on the surrogate and collect logs and metrics.

    ``cfg`` is a :class:`hlipwalk.config.ScenarioConfig`. ``W`` overrides the
    disturbance sets used for the error invariant sets; otherwise they come
    from ``cfg.disturbance.w_file`` or, failing that, from this run's samples.
    A fall ends the run early with ``status == "fall"`` and partial logs.
    """
    params = cfg.hlip_params()
    matrices = s2s_matrices(params)
    K = dlqr_gain(matrices.A, matrices.B, cfg.lqr_weights())
    Acl = matrices.A + matrices.B @ K
    path = cfg.build_path()
    model = cfg.surrogate_model()
    pushes = cfg.push_events()
    obstacles = cfg.obstacle_list()
    planner = FootstepPlanner(params, path, cfg.mpc_config(), obstacles=obstacles)
    controller = SteppingController(planner, K)
    rng = np.random.default_rng(model.rng_seed)
    recorder = _Recorder(stride)

    duration = cfg.duration if cfg.duration is not None \
        else path.T_end + cfg.settle_steps * params.T_sum
    n_steps = int(math.ceil(duration / params.T_sum - 1e-9))

    state = initial_state(planner, controller, params, model, rng, path)
    recorder.add(0.0, state.com, state.vel, state.stance_foot, state.heading, SSP)
    steps: list[StepLog] = []
    status, message = "ok", ""
    for _ in range(n_steps):
        try:
            state, entry = simulate_step(state, controller, params, model, pushes, rng, path,
                                         recorder=recorder)
        except SimulationDiverged as exc:
            status, message = "fall", str(exc)
            log.error("%s", exc)
            break
        steps.append(entry)

    if W is None:
        w_file = cfg.w_path()
        if w_file is not None:
            W = load_w(w_file)
        elif steps:
            W = {plane: estimate_w(np.array([s.w_x if plane == "x" else s.w_y for s in steps]),
                                   cfg.disturbance.margin) for plane in ("x", "y")}
    E = closed_loop_error_sets(Acl, W) if W is not None else None
    in_E = {"x": [], "y": []}
    if E is not None:
        for s in steps:
            in_E["x"].append(contains(E["x"], s.e_x, tol=1e-9))
            in_E["y"].append(contains(E["y"], s.e_y, tol=1e-9))

    result = ScenarioResult(recorder.rows, steps, controller.plans, W, E, in_E, {}, path,
                            status, message)
    result.summary = summarize(result, params, Acl, obstacles)
    return result


def summarize(result: ScenarioResult, params: HlipParams, Acl, obstacles) -> dict:
    traj = np.array([row[:10] for row in result.trajectory], dtype=float)
    t, com, vel = traj[:, 0], traj[:, 1:3], traj[:, 4:6]
    refs = [result.path.sample(ti) for ti in t]
    r = np.array([ref.r for ref in refs])
    rdot = np.array([ref.rdot for ref in refs])
    pos_err = np.linalg.norm(com - r, axis=1)
    vel_err = np.linalg.norm(vel - rdot, axis=1)
    out = {
        "status": result.status,
        "message": result.message,
        "steps": len(result.steps),
        "duration": float(t[-1]),
        "path_error_max": float(pos_err.max()),
        "path_error_rms": float(np.sqrt(np.mean(pos_err ** 2))),
        "velocity_error_rms": float(np.sqrt(np.mean(vel_err ** 2))),
        "closed_loop_spectral_radius": float(max(abs(np.linalg.eigvals(Acl)))),
        "mpc_fallbacks": sum(p.status != "optimal" for p in result.plans),
        "mpc_solve_time_max": max((p.solve_time for p in result.plans), default=0.0),
    }
    if obstacles:
        dists = [np.linalg.norm(com - p, axis=1).min() for p, _ in obstacles]
        out["min_obstacle_distance"] = float(min(dists))
        out["min_obstacle_clearance"] = float(min(dd - d for dd, (_, d) in zip(dists, obstacles)))
    else:
        out["min_obstacle_distance"] = None
        out["min_obstacle_clearance"] = None
    for plane in ("x", "y"):
        e = result.errors(plane)
        out[f"hlip_error_max_{plane}"] = np.abs(e).max(axis=0).tolist() if len(e) else [0.0] * 3
        flags = result.in_E[plane]
        out[f"fraction_in_E_{plane}"] = float(np.mean(flags)) if flags else None
        out[f"outside_E_{plane}"] = int(len(flags) - sum(flags))
    return out


def save_w(W: dict[str, Zonotope], path) -> None:
    with open(path, "w") as fh:
        json.dump({plane: W[plane].to_dict() for plane in ("x", "y")}, fh, indent=2)


def load_w(path) -> dict[str, Zonotope]:
    with open(path) as fh:
        data = json.load(fh)
    return {plane: Zonotope.from_dict(data[plane]) for plane in ("x", "y")}
