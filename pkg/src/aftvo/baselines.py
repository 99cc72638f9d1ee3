"""Constant-velocity EKF fusing per-sensor relative-pose estimates asynchronously.

State (12): position (world), Euler angles (roll, pitch, yaw), body-frame
linear velocity and body-frame angular rate.  A relative pose measured over
a frame gap ``dt_frame`` is turned into a pseudo-velocity observation
``(translation, euler) / dt_frame`` of the two velocity blocks.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .eval.trajectory import PoseTrajectory
from .sim.pose import euler_to_quat

log = logging.getLogger(__name__)

STATE_DIM = 12
DEFAULT_GRID = {"q_lin": [0.3, 3.0, 30.0, 300.0], "q_ang": [0.01, 0.1, 1.0], "p0_vel": [1.0, 100.0]}
H_VEL = np.hstack([np.zeros((6, 6)), np.eye(6)])


class TimeRegressionError(ValueError):
    pass


@dataclass
class EkfState:
    x: np.ndarray
    P: np.ndarray
    t_us: int

    def copy(self) -> "EkfState":
        return EkfState(self.x.copy(), self.P.copy(), self.t_us)


@dataclass(frozen=True)
class EkfParams:
    q_lin: float = 1.0      # linear-acceleration noise density (m^2/s^3)
    q_ang: float = 0.1      # angular-acceleration noise density (rad^2/s^3)
    p0_pose: float = 1e-6
    p0_vel: float = 1.0

    def as_dict(self) -> dict[str, float]:
        return {"q_lin": self.q_lin, "q_ang": self.q_ang, "p0_pose": self.p0_pose, "p0_vel": self.p0_vel}


def _rot(e: np.ndarray) -> np.ndarray:
    cr, sr = np.cos(e[0]), np.sin(e[0])
    cp, sp = np.cos(e[1]), np.sin(e[1])
    cy, sy = np.cos(e[2]), np.sin(e[2])
    return np.array([[cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
                     [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
                     [-sp, cp * sr, cp * cr]])


def _euler_rates(e: np.ndarray, w: np.ndarray) -> np.ndarray:
    cr, sr = np.cos(e[0]), np.sin(e[0])
    cp, tp = np.cos(e[1]), np.tan(e[1])
    return np.array([w[0] + sr * tp * w[1] + cr * tp * w[2],
                     cr * w[1] - sr * w[2],
                     (sr * w[1] + cr * w[2]) / cp])


def transition(x: np.ndarray, dt: float) -> np.ndarray:
    out = x.copy()
    out[0:3] = x[0:3] + _rot(x[3:6]) @ x[6:9] * dt
    out[3:6] = x[3:6] + _euler_rates(x[3:6], x[9:12]) * dt
    return out


def transition_jacobian(x: np.ndarray, dt: float, h: float = 1e-6) -> np.ndarray:
    if dt == 0:
        return np.eye(STATE_DIM)
    J = np.zeros((STATE_DIM, STATE_DIM))
    for i in range(STATE_DIM):
        d = np.zeros(STATE_DIM)
        d[i] = h
        J[:, i] = (transition(x + d, dt) - transition(x - d, dt)) / (2 * h)
    return J


def ekf_predict(state: EkfState, t_new_us: int, params: EkfParams = EkfParams()) -> EkfState:
    if t_new_us < state.t_us:
        raise TimeRegressionError(f"cannot predict backwards from {state.t_us} to {t_new_us}")
    dt = (t_new_us - state.t_us) * 1e-6
    if dt == 0:
        return state.copy()
    F = transition_jacobian(state.x, dt)
    Q = np.zeros((STATE_DIM, STATE_DIM))
    Q[6:9, 6:9] = np.eye(3) * params.q_lin * dt
    Q[9:12, 9:12] = np.eye(3) * params.q_ang * dt
    P = F @ state.P @ F.T + Q
    return EkfState(transition(state.x, dt), 0.5 * (P + P.T), t_new_us)


def kalman_update(x: np.ndarray, P: np.ndarray, z: np.ndarray, H: np.ndarray, R: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Linear Kalman update with the Joseph-form covariance."""
    S = H @ P @ H.T + R
    try:
        K = np.linalg.solve(S, H @ P).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular innovation covariance") from exc
    x_new = x + K @ (z - H @ x)
    A = np.eye(len(x)) - K @ H
    P_new = A @ P @ A.T + K @ R @ K.T
    return x_new, 0.5 * (P_new + P_new.T)


def ekf_update(state: EkfState, mean: np.ndarray, variance: np.ndarray, dt_frame_us: int) -> EkfState:
    """Fuse one relative-pose estimate (mixture mean/variance) spanning ``dt_frame_us``."""
    variance = np.asarray(variance, dtype=float)
    if np.any(variance <= 0):
        raise ValueError("measurement variance must be positive")
    dt = dt_frame_us * 1e-6
    z = np.asarray(mean, dtype=float) / dt
    R = np.diag(variance / dt ** 2)
    x, P = kalman_update(state.x, state.P, z, H_VEL, R)
    return EkfState(x, P, state.t_us)


@dataclass
class EkfMeasurements:
    """Relative-pose moments of one sensor, ready for filtering."""

    source_id: int
    frame_starts_us: np.ndarray
    timestamps_us: np.ndarray
    means: np.ndarray
    variances: np.ndarray


def merged_order(measurements: list[EkfMeasurements]) -> list[tuple[int, int, int]]:
    """(timestamp, source_id, index) for every measurement, globally sorted."""
    events = [(int(t), m.source_id, i) for m in measurements for i, t in enumerate(m.timestamps_us)]
    return sorted(events)


@dataclass
class EkfRun:
    trajectory: PoseTrajectory
    queries: PoseTrajectory | None = None
    order: list[tuple[int, int, int]] = field(default_factory=list)


def _to_pose_arrays(states: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    xs = np.array(states)
    return xs[:, :3], euler_to_quat(xs[:, 3:6])


def run_ekf(measurements: list[EkfMeasurements], params: EkfParams = EkfParams(),
            query_us: np.ndarray | None = None, start_state: np.ndarray | None = None) -> EkfRun:
    """Filter all measurements in global timestamp order.

    The filter starts at the earliest frame start with the first
    measurement's pseudo-velocity (or ``start_state``).  Poses are reported
    at every measurement stamp and, if given, at each query stamp.
    """
    order = merged_order(measurements)
    by_id = {m.source_id: m for m in measurements}
    t0 = min(int(m.frame_starts_us[0]) for m in measurements)
    x0 = np.zeros(STATE_DIM) if start_state is None else np.array(start_state, dtype=float)
    if start_state is None and order:
        _, k, i = order[0]
        m = by_id[k]
        gap = (m.timestamps_us[i] - m.frame_starts_us[i]) * 1e-6
        x0[6:12] = m.means[i] / gap
    P0 = np.diag([params.p0_pose] * 6 + [params.p0_vel] * 6)
    state = EkfState(x0, P0, t0)

    queries = [] if query_us is None else [int(q) for q in query_us]
    qi = 0
    meas_t, meas_x, q_t, q_x = [], [], [], []
    for t, k, i in order:
        while qi < len(queries) and queries[qi] <= t:
            if queries[qi] >= state.t_us:
                q_t.append(queries[qi])
                q_x.append(ekf_predict(state, queries[qi], params).x)
            qi += 1
        m = by_id[k]
        state = ekf_predict(state, t, params)
        state = ekf_update(state, m.means[i], m.variances[i], int(m.timestamps_us[i] - m.frame_starts_us[i]))
        if meas_t and meas_t[-1] == t:
            meas_x[-1] = state.x.copy()
        else:
            meas_t.append(t)
            meas_x.append(state.x.copy())
    while qi < len(queries):
        q_t.append(queries[qi])
        q_x.append(ekf_predict(state, queries[qi], params).x)
        qi += 1

    p, q = _to_pose_arrays(meas_x)
    traj = PoseTrajectory(np.array(meas_t), p, q)
    qtraj = None
    if q_t:
        qp, qq = _to_pose_arrays(q_x)
        qtraj = PoseTrajectory(np.array(q_t), qp, qq)
    return EkfRun(traj, qtraj, order)


def tune_ekf(evaluate, grid: dict[str, list[float]] | None = None) -> tuple[EkfParams, float]:
    """Grid search of process/initial noise; ``evaluate(params)`` returns a validation error."""
    grid = grid or DEFAULT_GRID
    best, best_score = EkfParams(), np.inf
    keys = sorted(grid)
    for values in itertools.product(*(grid[k] for k in keys)):
        params = replace(EkfParams(), **dict(zip(keys, values)))
        score = float(evaluate(params))
        if score < best_score:
            best, best_score = params, score
    log.info("EKF tuned: %s (score %.5f)", best, best_score)
    return best, best_score
