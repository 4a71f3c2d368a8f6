import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hlipwalk.hlip import make_params, s2s_matrices
from hlipwalk.paths import PathReference, SpeedProfile, make_path
from hlipwalk.planner import (LEFT, RIGHT, FootstepPlanner, MpcConfig, StepConstraints,
                              build_mpc_qp, plan_dynamics_residual, rollout, rotate_to_heading,
                              stepping_in_place_state, unpack)
from hlipwalk.qp import QpProblem, solve_qp
from oracles import enumerate_active_sets

PARAMS = make_params()
MATS = s2s_matrices(PARAMS)


class TablePath:
    """Path stand-in returning precomputed references at step times."""

    def __init__(self, refs, t0, T):
        self.refs, self.t0, self.T = refs, t0, T

    def sample(self, t):
        k = int(round((t - self.t0) / self.T)) - 1
        return self.refs[min(k, len(self.refs) - 1)]


def _strip_bounds(qp):
    return QpProblem(qp.H, qp.f, qp.A_eq, qp.b_eq)


def test_rotation_examples():
    assert rotate_to_heading(0.3, -0.2, 0.0) == (0.3, -0.2)
    sl, sw = rotate_to_heading(1.0, 0.0, math.pi / 2)
    assert sl == pytest.approx(0.0, abs=1e-15) and sw == pytest.approx(-1.0)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-10, 10))
def test_rotation_preserves_norm(ux, uy, theta):
    sl, sw = rotate_to_heading(ux, uy, theta)
    assert math.hypot(sl, sw) == pytest.approx(math.hypot(ux, uy), abs=1e-12)


def test_step_constraints_validation():
    with pytest.raises(ValueError):
        StepConstraints(s_l_min=0.5, s_l_max=0.1)
    with pytest.raises(ValueError):
        StepConstraints(s_w_min=0.4, s_w_max=0.3)
    with pytest.raises(ValueError):
        StepConstraints(s_w_min=0.0)
    c = StepConstraints()
    assert c.width_bounds(LEFT) == (0.10, 0.35)
    assert c.width_bounds(RIGHT) == (-0.35, -0.10)


def test_single_step_matches_grid_search():
    # stationary target offset from the COM; planes decouple so a 1-D grid per plane is exact
    x_now = np.array([0.0, 0.05, 0.2])
    y_now = np.array([0.0, -0.03, 0.1])
    path = make_path("point", {"origin": [0.3, -0.1]})
    cfg = MpcConfig(N=1, alpha=0.0)
    qp = build_mpc_qp(x_now, y_now, PARAMS, MATS, path, 0.0, cfg, RIGHT)
    z = solve_qp(_strip_bounds(qp)).z
    _, _, ux, uy = unpack(z, 1)
    grid = np.arange(-1.0, 1.0, 1e-4)
    A, B = MATS.A, MATS.B[:, 0]
    for state, target, u in ((x_now, 0.3, ux[0]), (y_now, -0.1, uy[0])):
        nxt = (A @ state)[:, None] + np.outer(B, grid)
        cost = (nxt[0] - target) ** 2 + nxt[2] ** 2
        assert u == pytest.approx(grid[np.argmin(cost)], abs=1e-4)


def test_reference_on_free_rollout_gives_zero_steps():
    x_now = np.array([0.1, 0.05, 0.3])
    y_now = np.array([0.0, -0.02, -0.1])
    N = 5
    xs = rollout(x_now, np.zeros(N), MATS)
    ys = rollout(y_now, np.zeros(N), MATS)
    refs = [PathReference(np.array([xs[k, 0], ys[k, 0]]), np.array([xs[k, 2], ys[k, 2]]), 0.0)
            for k in range(N)]
    path = TablePath(refs, 0.0, PARAMS.T_sum)
    for alpha in (0.0, 0.1, 1.0):
        qp = build_mpc_qp(x_now, y_now, PARAMS, MATS, path, 0.0, MpcConfig(N=N, alpha=alpha), LEFT)
        sol = solve_qp(_strip_bounds(qp))
        _, _, ux, uy = unpack(sol.z, N)
        assert np.abs(ux).max() < 1e-7 and np.abs(uy).max() < 1e-7


def test_active_length_bound_matches_oracle():
    x_now = np.array([0.0, 0.0, 0.6])
    y_now = np.zeros(3)
    path = make_path("point", {"origin": [1.5, 0.0]})
    free = build_mpc_qp(x_now, y_now, PARAMS, MATS, path, 0.0, MpcConfig(N=1, alpha=0.0), RIGHT)
    assert unpack(solve_qp(_strip_bounds(free)).z, 1)[2][0] > 0.2
    cfg = MpcConfig(N=1, alpha=0.0, constraints=StepConstraints(s_l_max=0.1))
    qp = build_mpc_qp(x_now, y_now, PARAMS, MATS, path, 0.0, cfg, RIGHT)
    sol = solve_qp(qp)
    _, _, ux, uy = unpack(sol.z, 1)
    sl, sw = rotate_to_heading(ux[0], uy[0], 0.0)
    assert sl == pytest.approx(0.1, abs=1e-8)
    assert sw == pytest.approx(0.10, abs=1e-8)
    A_in = np.vstack([qp.A_in, -qp.A_in])
    b_in = np.concatenate([qp.lb, -qp.ub])
    _, obj = enumerate_active_sets(qp.H, qp.f, qp.A_eq, qp.b_eq, A_in, b_in)
    assert sol.objective == pytest.approx(obj, abs=1e-6)


def test_build_qp_layout_and_cost():
    N = 3
    cfg = MpcConfig(N=N)
    path = make_path("line")
    qp = build_mpc_qp(np.zeros(3), np.zeros(3), PARAMS, MATS, path, 1.0, cfg, RIGHT)
    assert qp.n == 8 * N and qp.A_eq.shape == (6 * N, 8 * N) and qp.A_in.shape == (2 * N, 8 * N)
    # rows alternate the lateral sign pattern starting with a left landing
    assert (qp.lb[1], qp.ub[1]) == (0.10, 0.35)
    assert (qp.lb[3], qp.ub[3]) == (-0.35, -0.10)
    # objective of any feasible z equals the literal J_t + alpha J_u minus its constant
    rng = np.random.default_rng(3)
    ux, uy = rng.normal(size=N) * 0.2, rng.normal(size=N) * 0.2
    xs, ys = rollout(np.zeros(3), ux, MATS), rollout(np.zeros(3), uy, MATS)
    z = np.column_stack([xs, ys, ux, uy]).reshape(-1)
    assert np.abs(qp.A_eq @ z - qp.b_eq).max() < 1e-12
    J, const = 0.0, 0.0
    for k in range(N):
        ref = path.sample(1.0 + (k + 1) * PARAMS.T_sum)
        c = np.array([xs[k, 0], ys[k, 0]])
        v = np.array([xs[k, 2], ys[k, 2]])
        J += np.sum((c - ref.r) ** 2) + np.sum((v - ref.rdot) ** 2) + cfg.alpha * (ux[k] ** 2 + uy[k] ** 2)
        const += ref.r @ ref.r + ref.rdot @ ref.rdot
    assert qp.objective(z) + const == pytest.approx(J, rel=1e-12)


def test_invalid_stance():
    with pytest.raises(ValueError):
        build_mpc_qp(np.zeros(3), np.zeros(3), PARAMS, MATS, make_path("line"), 0.0, MpcConfig(),
                     "middle")


def _closed_loop(path, steps, cfg=None):
    planner = FootstepPlanner(PARAMS, path, cfg)
    plans = []
    for k in range(steps):
        plans.append(planner.mpc_step(k * PARAMS.T_sum))
    return planner, plans


def test_stepping_in_place_for_point_target():
    _, plans = _closed_loop(make_path("point", {"duration": 20.0}), 40)
    for plan in plans:
        assert plan.status == "optimal"
        assert abs(plan.u_x[0]) < 1e-3
        assert abs(plan.u_y[0]) >= 0.10 - 1e-8


def test_line_steady_state_step_length():
    path = make_path("line", {"length": 30.0})
    _, plans = _closed_loop(path, 50)
    speed = 0.5
    assert plans[-1].u_x[0] == pytest.approx(speed * PARAMS.T_sum, rel=0.02)


@pytest.mark.parametrize("shape", ["circle", "square", "sinusoid"])
def test_plans_are_dynamically_consistent_and_feasible(shape):
    path = make_path(shape)
    cons = StepConstraints()
    _, plans = _closed_loop(path, 30)
    for plan in plans:
        assert plan.status == "optimal"
        assert plan_dynamics_residual(plan, MATS) < 1e-8
        landing = LEFT if plan.stance == RIGHT else RIGHT
        widths = []
        for k in range(len(plan.u_x)):
            theta = path.sample(plan.t0 + (k + 1) * PARAMS.T_sum).theta
            sl, sw = rotate_to_heading(plan.u_x[k], plan.u_y[k], theta)
            lo, hi = cons.width_bounds(landing)
            assert cons.s_l_min - 1e-7 <= sl <= cons.s_l_max + 1e-7
            assert lo - 1e-7 <= sw <= hi + 1e-7
            widths.append(sw)
            landing = LEFT if landing == RIGHT else RIGHT
        signs = np.sign(widths)
        assert np.all(signs[1:] == -signs[:-1])


def test_stance_alternates():
    planner = FootstepPlanner(PARAMS, make_path("line"), stance=RIGHT)
    seen = []
    for k in range(6):
        seen.append(planner.mpc_step(k * PARAMS.T_sum).stance)
    assert seen == [RIGHT, LEFT] * 3


def test_receding_horizon_bounded_on_long_circle():
    path = make_path("circle", {"radius": 7.0})
    assert path.T_end > 80.0
    planner, plans = _closed_loop(path, 200)
    err = [np.linalg.norm(np.array([p.x_pred[0, 0], p.y_pred[0, 0]])
                          - path.sample(p.t0 + PARAMS.T_sum).r) for p in plans]
    assert max(err) <= 3 * max(err[20], 0.05)


def test_hlip_stops_after_terminal_time():
    path = make_path("line", {"length": 3.0})
    n_end = int(math.ceil(path.T_end / PARAMS.T_sum))
    planner, plans = _closed_loop(path, n_end + 12)
    after = plans[n_end + 10:]
    for plan in after:
        # sagittal speed; the lateral plane keeps its stepping-in-place sway
        assert abs(plan.x_now[2]) < 0.02
    c = [np.array([p.x_now[0], p.y_now[0]]) for p in plans[n_end + 8:]]
    drift = np.linalg.norm((c[-1] + c[-2]) / 2 - (c[0] + c[1]) / 2) / ((len(c) - 2) * PARAMS.T_sum)
    assert drift < 0.02


def test_stepping_in_place_state_is_period_two():
    for landing in (LEFT, RIGHT):
        x, y = stepping_in_place_state(PARAMS, [1.0, 2.0], 0.0, 0.1, landing)
        u = 0.1 if landing == LEFT else -0.1
        y1 = MATS.A @ y + MATS.B[:, 0] * u
        y2 = MATS.A @ y1 - MATS.B[:, 0] * u
        assert np.allclose(y2, y, atol=1e-12)
        assert (y[0] + y1[0]) / 2 == pytest.approx(2.0, abs=1e-12)
        assert np.allclose(x, [1.0, 0.0, 0.0])


def test_fallback_on_solver_failure():
    cfg = MpcConfig(max_iter=1, tol=1e-14)
    planner = FootstepPlanner(PARAMS, make_path("circle"), cfg)
    plan = planner.mpc_step(0.0)
    if plan.status != "optimal":
        assert plan.status.startswith("fallback:")
        assert plan_dynamics_residual(plan, MATS) < 1e-8
    planner.cfg = MpcConfig()
    good = planner.mpc_step(PARAMS.T_sum)
    planner.cfg = cfg
    nxt = planner.mpc_step(2 * PARAMS.T_sum)
    if nxt.status != "optimal":
        assert np.allclose(nxt.u_x[:-1], good.u_x[1:])


def test_obstacle_plan_keeps_clearance():
    obstacle = (np.array([3.0, -0.5]), 0.3)
    path = make_path("sinusoid")
    planner = FootstepPlanner(PARAMS, path, obstacles=[obstacle])
    for k in range(60):
        plan = planner.mpc_step(k * PARAMS.T_sum)
        assert plan.status == "optimal"
        c = np.column_stack([plan.x_pred[:, 0], plan.y_pred[:, 0]])
        assert np.linalg.norm(c - obstacle[0], axis=1).min() >= 0.3 + 0.15 - 1e-6
