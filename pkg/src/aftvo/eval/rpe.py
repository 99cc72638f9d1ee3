"""Relative pose error between an estimated and a reference trajectory."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..sim.pose import euler_to_quat, quat_conj, quat_mul, quat_rotate, quat_to_rotvec
from .trajectory import PoseTrajectory


@dataclass
class RpeReport:
    rmse: float
    max: float
    mean: float
    std: float
    errors: np.ndarray = field(repr=False)
    rot_rmse: float = 0.0
    rot_errors: np.ndarray = field(default=None, repr=False)
    delta: str = "consecutive"

    def row(self) -> dict[str, float]:
        return {"rmse": self.rmse, "max": self.max, "mean": self.mean, "std": self.std, "rot_rmse": self.rot_rmse}

    @classmethod
    def from_errors(cls, errors: np.ndarray, rot_errors: np.ndarray | None = None) -> "RpeReport":
        e = np.asarray(errors, dtype=float)
        r = np.zeros_like(e) if rot_errors is None else np.asarray(rot_errors, dtype=float)
        return cls(rmse=float(np.sqrt(np.mean(e ** 2))), max=float(e.max()), mean=float(e.mean()),
                   std=float(e.std()), errors=e, rot_rmse=float(np.sqrt(np.mean(r ** 2))), rot_errors=r)


def _pair_error_vectors(est: PoseTrajectory, gt: PoseTrajectory) -> tuple[np.ndarray, np.ndarray]:
    def rel(tr):
        qi = quat_conj(tr.quats[:-1])
        return quat_rotate(qi, tr.positions[1:] - tr.positions[:-1]), quat_mul(qi, tr.quats[1:])

    te, qe = rel(est)
    tg, qg = rel(gt)
    # E = gt_rel^-1 * est_rel
    qgi = quat_conj(qg)
    return quat_rotate(qgi, te - tg), quat_to_rotvec(quat_mul(qgi, qe))


def _matched(est: PoseTrajectory, gt: PoseTrajectory) -> PoseTrajectory:
    if len(est) < 2:
        raise ValueError("RPE needs at least 2 matched timestamps")
    try:
        return gt.select(est.timestamps_us)
    except KeyError as exc:
        raise ValueError("estimate timestamps must be a subset of ground-truth timestamps") from exc


def rpe(est: PoseTrajectory, gt: PoseTrajectory) -> RpeReport:
    """Translational RPE over consecutive estimate stamps (rotational part kept alongside)."""
    t_err, r_err = _pair_error_vectors(est, _matched(est, gt))
    return RpeReport.from_errors(np.linalg.norm(t_err, axis=1), np.linalg.norm(r_err, axis=1))


def rpe_series(est: PoseTrajectory, gt: PoseTrajectory) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pair end stamps, translation error vectors (n, 3) and rotation error vectors (n, 3)."""
    t_err, r_err = _pair_error_vectors(est, _matched(est, gt))
    return est.timestamps_us[1:], t_err, r_err


def relative_step_errors(pred_rel: np.ndarray, true_rel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-step RPE from relative-pose 6-vectors directly (same definition as :func:`rpe`)."""
    tp, tt = pred_rel[:, :3], true_rel[:, :3]
    qt_inv = quat_conj(euler_to_quat(true_rel[:, 3:]))
    t_err = quat_rotate(qt_inv, tp - tt)
    q_err = quat_mul(qt_inv, euler_to_quat(pred_rel[:, 3:]))
    return np.linalg.norm(t_err, axis=1), np.linalg.norm(quat_to_rotvec(q_err), axis=1)
