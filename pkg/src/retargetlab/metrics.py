"""Trajectory quality counts, tracking errors and representation distances."""

from __future__ import annotations

import csv
import io
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from retargetlab.kinematics import RobotModel, colliding_pairs, link_transforms
from retargetlab.motionrep import stack
from retargetlab.sequences import RobotTrajectory

JUMP_THRESHOLD = 0.5
LIMIT_MARGIN = 0.05
ALIGNMENTS = ("none", "root", "root-yaw")


@dataclass(frozen=True)
class FrameCount:
    count: int
    frames: tuple[int, ...]
    percent: float


@dataclass(frozen=True)
class QualityReport:
    frame_count: int
    joint_jump: FrameCount
    self_collision: FrameCount
    joint_limit: FrameCount

    def to_dict(self) -> dict:
        out = {"frame_count": self.frame_count}
        for name in ("joint_jump", "self_collision", "joint_limit"):
            fc = getattr(self, name)
            out[name] = {"count": fc.count, "percent": fc.percent, "frames": list(fc.frames)}
        return out

    def csv_row(self) -> dict:
        return {
            "frame_count": self.frame_count,
            "joint_jump_frames": self.joint_jump.count,
            "joint_jump_pct": self.joint_jump.percent,
            "self_collision_frames": self.self_collision.count,
            "self_collision_pct": self.self_collision.percent,
            "joint_limit_frames": self.joint_limit.count,
            "joint_limit_pct": self.joint_limit.percent,
        }


@dataclass(frozen=True)
class TrackingErrors:
    mpjpe: float
    w_mpjpe: float
    alignment: str = "root"

    def csv_row(self) -> dict:
        return {"mpjpe": self.mpjpe, "w_mpjpe": self.w_mpjpe, "alignment": self.alignment}


def _count(mask: np.ndarray) -> FrameCount:
    n = mask.size
    idx = tuple(int(i) for i in np.flatnonzero(mask))
    return FrameCount(len(idx), idx, 100.0 * len(idx) / n if n else 0.0)


def jump_frames(q: np.ndarray, threshold: float = JUMP_THRESHOLD) -> np.ndarray:
    """Boolean per frame; frame 0 never counts."""
    mask = np.zeros(q.shape[0], dtype=bool)
    if q.shape[0] >= 2 and q.shape[1]:
        mask[1:] = np.abs(np.diff(q, axis=0)).max(axis=1) > threshold
    return mask


def limit_frames(q: np.ndarray, model: RobotModel, margin: float = LIMIT_MARGIN) -> np.ndarray:
    near = (q - model.lower <= margin) | (model.upper - q <= margin)
    return near.any(axis=1) if q.shape[1] else np.zeros(q.shape[0], dtype=bool)


def quality_report(traj: RobotTrajectory, model: RobotModel) -> QualityReport:
    """Joint-jump, non-hand self-collision and near-limit frame counts."""
    traj.check_model(model)
    q = traj.q
    collide = np.array([bool(colliding_pairs(model, cfg, exclude_hands=True)) for cfg in traj.frames], dtype=bool)
    return QualityReport(len(traj), _count(jump_frames(q)), _count(collide), _count(limit_frames(q, model)))


def _yaw_rotation(rot: np.ndarray, up: int) -> np.ndarray:
    """Rotation about the up axis that matches the heading of ``rot``."""
    fwd_axis = 0
    fwd = rot[:, fwd_axis].copy()
    fwd[up] = 0.0
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        return np.eye(3)
    fwd /= n
    upv = np.zeros(3)
    upv[up] = 1.0
    side = np.cross(upv, fwd)
    out = np.zeros((3, 3))
    out[:, fwd_axis] = fwd
    # keep the frame right-handed whatever the up axis is
    if up == 2:
        out[:, 1], out[:, 2] = side, upv
    else:
        out[:, 1], out[:, 2] = upv, np.cross(fwd, upv)
    return out


def body_positions(traj: RobotTrajectory, model: RobotModel, alignment: str = "none") -> np.ndarray:
    """World or root-aligned positions of all non-base links, shape ``(T, L - 1, 3)``."""
    if alignment not in ALIGNMENTS:
        raise ValueError(f"alignment must be one of {ALIGNMENTS}, got {alignment!r}")
    keep = [i for i, link in enumerate(model.links) if link.name != model.base]
    out = np.empty((len(traj), len(keep), 3))
    for t, cfg in enumerate(traj.frames):
        _, trans = link_transforms(model, cfg)
        p = trans[keep]
        if alignment == "root":
            p = (p - cfg.root.translation) @ cfg.root.rotation
        elif alignment == "root-yaw":
            p = (p - cfg.root.translation) @ _yaw_rotation(cfg.root.rotation, model.up_index)
        out[t] = p
    return out


def tracking_errors(predicted: RobotTrajectory, reference: RobotTrajectory, model: RobotModel,
                    alignment: str = "root") -> TrackingErrors:
    """Mean per-body position error, aligned (``mpjpe``) and in the world frame (``w_mpjpe``)."""
    if len(predicted) != len(reference):
        raise ValueError(f"length mismatch: {len(predicted)} vs {len(reference)} frames")
    if len(predicted) == 0:
        raise ValueError("no frames")
    predicted.check_model(model)
    reference.check_model(model)

    def mean_err(a, b):
        return float(np.mean(np.linalg.norm(a - b, axis=-1))) if a.size else 0.0

    w = mean_err(body_positions(predicted, model), body_positions(reference, model))
    m = mean_err(body_positions(predicted, model, alignment), body_positions(reference, model, alignment))
    return TrackingErrors(m, w, alignment)


def rep_l1_distance(a, b) -> float:
    """Sum over frames of elementwise absolute differences of stacked rep vectors.

    Accepts rep lists or ``(T, D)`` arrays.
    """
    a = stack(a) if len(a) and hasattr(a[0], "vector") else np.asarray(a, dtype=float)
    b = stack(b) if len(b) and hasattr(b[0], "vector") else np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def csv_text(rows: Sequence[dict]) -> str:
    """CSV with a header from the first row's keys; floats use repr."""
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()
