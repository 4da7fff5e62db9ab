"""Per-frame motion features for human sequences and robot trajectories.

Planar root velocities are world-frame components in the ground plane (XZ
under Y-up, XY under Z-up) and keep the ``r_x``/``r_z`` labels either way.
Velocities are forward differences; the last frame repeats the previous
velocity so every frame gets a feature vector. Robot reps carry one extra
scalar, the root height, so that a trajectory can be rebuilt from its reps.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from retargetlab.errors import DomainError
from retargetlab.kinematics import JointConfig, RobotModel, link_transforms
from retargetlab.lie import Pose
from retargetlab.sequences import MotionSequence, RobotTrajectory

HUMAN_FIELDS = ("r_x", "r_z", "r", "j_p", "j_v")
ROBOT_FIELDS = ("r_bot_x", "r_bot_z", "r_bot", "j_bot_p", "j_bot_v", "q", "root_height")
EXTENSIONS = ("root_height",)


def rotation_to_6d(r) -> np.ndarray:
    """First two columns of ``r``, concatenated."""
    r = np.asarray(r, dtype=float)
    return np.concatenate([r[:, 0], r[:, 1]])


def rotation_from_6d(x) -> np.ndarray:
    """Gram-Schmidt the two 3-vectors and complete with their cross product."""
    x = np.asarray(x, dtype=float).reshape(6)
    a, b = x[:3], x[3:]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if not np.all(np.isfinite(x)) or na < 1e-12 or nb < 1e-12:
        raise DomainError(f"degenerate 6D rotation {x.tolist()}")
    c0 = a / na
    b = b - (c0 @ b) * c0
    nb2 = np.linalg.norm(b)
    if nb2 < 1e-9 * nb:
        raise DomainError("6D rotation columns are parallel")
    c1 = b / nb2
    return np.stack([c0, c1, np.cross(c0, c1)], axis=1)


def _plane(up_axis: str) -> tuple[int, int]:
    if up_axis not in ("Y", "Z"):
        raise ValueError(f"up_axis must be 'Y' or 'Z', got {up_axis!r}")
    return (0, 2) if up_axis == "Y" else (0, 1)


def _forward_diff(x: np.ndarray, fps: float) -> np.ndarray:
    """Forward differences along axis 0; last row repeats, single frame gives zeros."""
    v = np.zeros_like(x)
    if x.shape[0] >= 2:
        v[:-1] = (x[1:] - x[:-1]) * fps
        v[-1] = v[-2]
    return v


@dataclass(frozen=True, eq=False)
class HumanRep:
    r_x: float
    r_z: float
    r: np.ndarray
    j_p: np.ndarray
    j_v: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([[self.r_x, self.r_z], self.r, self.j_p, self.j_v])


@dataclass(frozen=True, eq=False)
class RobotRep:
    r_bot_x: float
    r_bot_z: float
    r_bot: np.ndarray
    j_bot_p: np.ndarray
    j_bot_v: np.ndarray
    q: np.ndarray
    root_height: float

    def vector(self) -> np.ndarray:
        return np.concatenate([[self.r_bot_x, self.r_bot_z], self.r_bot, self.j_bot_p, self.j_bot_v,
                               self.q, [self.root_height]])


def _root_features(root_pos: np.ndarray, root_rot: np.ndarray, points: np.ndarray, fps: float, plane):
    """Planar root velocity, 6D orientation, root-frame point positions and velocities."""
    vel = _forward_diff(root_pos[:, list(plane)], fps)
    local = np.einsum("tji,tbj->tbi", root_rot, points - root_pos[:, None, :])
    local_v = _forward_diff(local, fps)
    six = np.array([rotation_to_6d(r) for r in root_rot]).reshape(len(root_pos), 6)
    return vel, six, local.reshape(len(root_pos), -1), local_v.reshape(len(root_pos), -1)


def human_to_rep(seq: MotionSequence, up_axis: str = "Y", root_body: str | None = None) -> list[HumanRep]:
    """Feature vectors for a human sequence; ``root_body`` defaults to the first body."""
    if len(seq) < 2:
        raise ValueError(f"need at least 2 frames, got {len(seq)}")
    plane = _plane(up_axis)
    root = seq.body(root_body) if root_body is not None else 0
    others = [b for b in range(len(seq.body_names)) if b != root]
    vel, six, jp, jv = _root_features(seq.positions[:, root], seq.rotations[:, root],
                                      seq.positions[:, others], seq.fps, plane)
    return [HumanRep(float(vel[t, 0]), float(vel[t, 1]), six[t], jp[t], jv[t]) for t in range(len(seq))]


def _body_links(model: RobotModel) -> list[int]:
    return [i for i, link in enumerate(model.links) if link.name != model.base]


def robot_traj_to_rep(traj: RobotTrajectory, model: RobotModel) -> list[RobotRep]:
    """Feature vectors for a robot trajectory via forward kinematics (root = base link)."""
    traj.check_model(model)
    if len(traj) == 0:
        raise ValueError("no frames")
    links = _body_links(model)
    pts = np.empty((len(traj), len(links), 3))
    for t, cfg in enumerate(traj.frames):
        _, trans = link_transforms(model, cfg)
        pts[t] = trans[links]
    root_pos = np.array([cfg.root.translation for cfg in traj.frames])
    root_rot = np.array([cfg.root.rotation for cfg in traj.frames])
    vel, six, jp, jv = _root_features(root_pos, root_rot, pts, traj.fps, model.ground_indices)
    up = model.up_index
    return [RobotRep(float(vel[t, 0]), float(vel[t, 1]), six[t], jp[t], jv[t], traj.frames[t].q.copy(),
                     float(root_pos[t, up])) for t in range(len(traj))]


def rep_to_robot_traj(reps: Sequence[RobotRep], model: RobotModel, initial_root: Pose, fps: float) -> RobotTrajectory:
    """Rebuild a trajectory: integrate planar velocities from ``initial_root``, take
    orientation from the 6D field and height from ``root_height``, copy ``q``."""
    if not reps:
        raise ValueError("no reps")
    for t, rep in enumerate(reps):
        if rep.q.shape != (model.dof,):
            raise ValueError(f"reps[{t}].q has {rep.q.size} values, model {model.name!r} has {model.dof}")
    plane = list(model.ground_indices)
    up = model.up_index
    pos = np.array(initial_root.translation, dtype=float)
    frames = []
    for t, rep in enumerate(reps):
        if t > 0:
            prev = reps[t - 1]
            pos[plane] = pos[plane] + np.array([prev.r_bot_x, prev.r_bot_z]) / fps
        pos[up] = rep.root_height
        frames.append(JointConfig(Pose(rotation_from_6d(rep.r_bot), pos.copy()), rep.q))
    return RobotTrajectory(fps, model.joint_names, tuple(frames))


def stack(reps: Sequence[HumanRep | RobotRep]) -> np.ndarray:
    """``(T, D)`` array of rep vectors."""
    return np.array([r.vector() for r in reps], dtype=float).reshape(len(reps), -1)


def _layout(kind: str, reps) -> list[dict]:
    r0 = reps[0]
    if kind == "human":
        sizes = [1, 1, 6, r0.j_p.size, r0.j_v.size]
        names = HUMAN_FIELDS
    else:
        sizes = [1, 1, 6, r0.j_bot_p.size, r0.j_bot_v.size, r0.q.size, 1]
        names = ROBOT_FIELDS
    return [{"name": n, "size": int(s)} for n, s in zip(names, sizes)]


def reps_to_document(reps: Sequence[HumanRep | RobotRep], fps: float) -> dict:
    """Header plus flat row-major data."""
    if not reps:
        raise ValueError("no reps")
    kind = "robot" if isinstance(reps[0], RobotRep) else "human"
    data = stack(reps)
    header = {"kind": kind, "fields": _layout(kind, reps), "d": int(data.shape[1]), "n": int(data.shape[0]),
              "fps": fps, "extensions": list(EXTENSIONS) if kind == "robot" else []}
    if kind == "human":
        header["k"] = int(reps[0].j_p.size // 3)
    else:
        header["joints"] = int(reps[0].q.size)
    return {"header": header, "data": data.reshape(-1).tolist()}


def reps_from_document(doc: Mapping) -> tuple[list[HumanRep | RobotRep], float]:
    header = doc["header"]
    d, n = int(header["d"]), int(header["n"])
    data = np.asarray(doc["data"], dtype=float)
    if data.size != d * n:
        raise ValueError(f"data has {data.size} values, header says {n} x {d}")
    data = data.reshape(n, d)
    sizes = [f["size"] for f in header["fields"]]
    if sum(sizes) != d:
        raise ValueError("field sizes do not add up to d")
    cuts = np.cumsum(sizes)[:-1]
    reps = []
    for row in data:
        parts = np.split(row, cuts)
        if header["kind"] == "human":
            reps.append(HumanRep(float(parts[0][0]), float(parts[1][0]), parts[2], parts[3], parts[4]))
        else:
            reps.append(RobotRep(float(parts[0][0]), float(parts[1][0]), parts[2], parts[3], parts[4], parts[5],
                                 float(parts[6][0])))
    return reps, float(header["fps"])
