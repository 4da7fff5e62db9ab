"""Synthetic motions with known answers, used by tests and the bundled examples."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from retargetlab.kinematics import JointConfig, RobotModel, link_transforms
from retargetlab.lie import Pose
from retargetlab.objective import MappingConfig, MappingPair
from retargetlab.sequences import MotionSequence, RobotTrajectory


def motion_from_trajectory(model: RobotModel, traj: RobotTrajectory, bodies: Sequence[str] | None = None,
                           prefix: str = "h_") -> MotionSequence:
    """Human-side motion whose bodies sit exactly on the robot links of ``traj``.

    Body ``prefix + link`` carries the world pose of ``link``, so a mapping
    built by :func:`identity_mapping` is solved exactly by ``traj``.
    """
    traj = traj.for_model(model)
    bodies = list(bodies) if bodies is not None else [link.name for link in model.links]
    idx = [model.link_index[b] for b in bodies]
    pos = np.empty((len(traj), len(idx), 3))
    rot = np.empty((len(traj), len(idx), 3, 3))
    for t, cfg in enumerate(traj.frames):
        rots, trans = link_transforms(model, cfg)
        pos[t] = trans[idx]
        rot[t] = rots[idx]
    return MotionSequence(traj.fps, tuple(prefix + b for b in bodies), pos, rot)


def identity_mapping(bodies: Sequence[str], end_effectors: Sequence[str] = (), w_R: float = 1.0, w_p: float = 1.0,
                     prefix: str = "h_") -> MappingConfig:
    ee = set(end_effectors)
    return MappingConfig(tuple(MappingPair(prefix + b, b, w_R, w_p, b in ee) for b in bodies))


def random_reachable_trajectory(model: RobotModel, frames: int, seed: int = 0, fps: float = 30.0,
                                shrink: float = 0.8, root: Pose | None = None) -> RobotTrajectory:
    """Independent uniform joint samples inside the central ``shrink`` part of each range."""
    rng = np.random.default_rng(seed)
    mid = model.mid_range()
    half = 0.5 * (model.upper - model.lower) * shrink
    q = rng.uniform(mid - half, mid + half, size=(frames, model.dof))
    return RobotTrajectory.from_arrays(fps, model.joint_names, q, root or Pose())


def smooth_trajectory(model: RobotModel, frames: int, fps: float = 30.0, amplitude: float = 0.3,
                      root: Pose | None = None, seed: int = 0) -> RobotTrajectory:
    """Sinusoidal joints around mid-range, clipped to the limits."""
    rng = np.random.default_rng(seed)
    t = np.arange(frames)[:, None] / fps
    freq = rng.uniform(0.3, 1.0, model.dof)
    phase = rng.uniform(0, 2 * np.pi, model.dof)
    q = model.mid_range() + amplitude * np.sin(2 * np.pi * freq * t + phase)
    q = np.clip(q, model.lower, model.upper)
    return RobotTrajectory.from_arrays(fps, model.joint_names, q, root or Pose())


def saddle_sweep(frames: int = 31, fps: float = 30.0, y_extent: float = 0.3) -> tuple[MotionSequence, MappingConfig]:
    """Planar2 end-effector target sweeping through the folded-arm saddle.

    The target moves along ``x = 1`` from ``y = +y_extent`` to ``-y_extent``.
    Started from the stretched pose every frame, the solver drops into
    whichever elbow branch the target side favours, so the joint solution
    flips across ``y = 0``; warm-starting stays on one branch.
    """
    ys = np.linspace(y_extent, -y_extent, frames)
    pos = np.zeros((frames, 1, 3))
    pos[:, 0, 0] = 1.0
    pos[:, 0, 1] = ys
    rot = np.broadcast_to(np.eye(3), (frames, 1, 3, 3)).copy()
    motion = MotionSequence(fps, ("hand",), pos, rot)
    mapping = MappingConfig((MappingPair("hand", "ee", 0.0, 1.0, True),))
    return motion, mapping


def saddle_sweep_init() -> JointConfig:
    return JointConfig(Pose(), [0.0, 0.0])
