"""Motion sequences, robot trajectories, and their JSON document formats.

Motion document::

    {"fps": 30, "body_names": [...],
     "frames": [{"poses": [{"pos": [x, y, z], "quat_wxyz": [w, x, y, z]}, ...]}, ...]}

Trajectory document::

    {"fps": 30, "joint_names": [...],
     "frames": [{"root_pos": [3], "root_quat_wxyz": [4], "q": [n]}, ...]}
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from retargetlab.kinematics import JointConfig, RobotModel
from retargetlab.lie import Pose


def quat_wxyz_to_matrix(quat) -> np.ndarray:
    quat = np.asarray(quat, dtype=float)
    if quat.shape[-1] != 4 or not np.all(np.isfinite(quat)):
        raise ValueError(f"expected finite wxyz quaternion(s), got shape {quat.shape}")
    if np.any(np.linalg.norm(quat, axis=-1) < 1e-12):
        raise ValueError("zero quaternion")
    return Rotation.from_quat(quat, scalar_first=True).as_matrix()


def matrix_to_quat_wxyz(rot) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(rot, dtype=float)).as_quat(canonical=True, scalar_first=True)


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """Per-frame world poses of named bodies sampled at ``fps``.

    Attributes:
        positions: ``(T, B, 3)`` meters.
        rotations: ``(T, B, 3, 3)`` rotation matrices.
    """

    fps: float
    body_names: tuple[str, ...]
    positions: np.ndarray
    rotations: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "body_names", tuple(self.body_names))
        pos = np.asarray(self.positions, dtype=float)
        rot = np.asarray(self.rotations, dtype=float)
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps!r}")
        b = len(self.body_names)
        if len(set(self.body_names)) != b:
            raise ValueError("duplicate body names")
        if pos.ndim != 3 or pos.shape[1:] != (b, 3):
            raise ValueError(f"positions must have shape (T, {b}, 3), got {pos.shape}")
        if rot.shape != pos.shape[:2] + (3, 3):
            raise ValueError(f"rotations must have shape (T, {b}, 3, 3), got {rot.shape}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "rotations", rot)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    def body(self, name: str) -> int:
        try:
            return self.body_names.index(name)
        except ValueError:
            raise KeyError(f"body {name!r} not in motion (has {list(self.body_names)})") from None

    def targets(self, t: int) -> dict[str, Pose]:
        return {n: Pose(self.rotations[t, b], self.positions[t, b]) for b, n in enumerate(self.body_names)}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MotionSequence":
        names = list(doc["body_names"])
        frames = doc["frames"]
        pos = np.zeros((len(frames), len(names), 3))
        quat = np.zeros((len(frames), len(names), 4))
        for t, frame in enumerate(frames):
            poses = frame["poses"]
            if len(poses) != len(names):
                raise ValueError(f"frames[{t}] has {len(poses)} poses, expected {len(names)}")
            for b, p in enumerate(poses):
                pos[t, b] = p["pos"]
                quat[t, b] = p["quat_wxyz"]
        rot = quat_wxyz_to_matrix(quat.reshape(-1, 4)).reshape(len(frames), len(names), 3, 3) if frames else \
            np.zeros((0, len(names), 3, 3))
        return cls(float(doc["fps"]), tuple(names), pos, rot)

    def to_dict(self) -> dict:
        frames = []
        for t in range(len(self)):
            poses = [{"pos": self.positions[t, b].tolist(),
                      "quat_wxyz": matrix_to_quat_wxyz(self.rotations[t, b]).tolist()}
                     for b in range(len(self.body_names))]
            frames.append({"poses": poses})
        return {"fps": self.fps, "body_names": list(self.body_names), "frames": frames}


@dataclass(frozen=True, eq=False)
class RobotTrajectory:
    fps: float
    joint_names: tuple[str, ...]
    frames: tuple[JointConfig, ...]

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps!r}")
        n = len(self.joint_names)
        for t, cfg in enumerate(self.frames):
            if cfg.q.shape != (n,):
                raise ValueError(f"frames[{t}] has {cfg.q.size} joint values, expected {n}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    @property
    def q(self) -> np.ndarray:
        """Joint angles ``(T, n)``."""
        return np.array([cfg.q for cfg in self.frames]).reshape(len(self.frames), len(self.joint_names))

    @classmethod
    def from_arrays(cls, fps: float, joint_names: Sequence[str], q, roots: Sequence[Pose] | Pose | None = None):
        q = np.asarray(q, dtype=float)
        if roots is None:
            roots = Pose()
        if isinstance(roots, Pose):
            roots = [roots] * len(q)
        return cls(fps, tuple(joint_names), tuple(JointConfig(r, qi) for r, qi in zip(roots, q)))

    def check_model(self, model: RobotModel) -> None:
        """Raise ``ValueError`` naming the first joint that does not match the model."""
        missing = [n for n in model.joint_names if n not in self.joint_names]
        if missing:
            raise ValueError(f"trajectory is missing joint {missing[0]!r} of model {model.name!r}")
        extra = [n for n in self.joint_names if n not in model.joint_names]
        if extra:
            raise ValueError(f"trajectory joint {extra[0]!r} does not exist in model {model.name!r}")
        if self.joint_names != model.joint_names:
            raise ValueError(f"trajectory joint order differs from model {model.name!r}; "
                             f"use for_model() to reorder")

    def for_model(self, model: RobotModel) -> "RobotTrajectory":
        """Return this trajectory with joints reordered to the model's order."""
        missing = [n for n in model.joint_names if n not in self.joint_names]
        if missing:
            raise ValueError(f"trajectory is missing joint {missing[0]!r} of model {model.name!r}")
        extra = [n for n in self.joint_names if n not in model.joint_names]
        if extra:
            raise ValueError(f"trajectory joint {extra[0]!r} does not exist in model {model.name!r}")
        if self.joint_names == model.joint_names:
            return self
        idx = [self.joint_names.index(n) for n in model.joint_names]
        return RobotTrajectory(self.fps, model.joint_names, tuple(cfg.with_q(cfg.q[idx]) for cfg in self.frames))

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RobotTrajectory":
        names = tuple(doc["joint_names"])
        frames = []
        for t, fr in enumerate(doc["frames"]):
            root_pos = fr.get("root_pos", [0.0, 0.0, 0.0])
            root_quat = fr.get("root_quat_wxyz", [1.0, 0.0, 0.0, 0.0])
            q = fr["q"]
            if len(q) != len(names):
                raise ValueError(f"frames[{t}].q has {len(q)} values, expected {len(names)}")
            frames.append(JointConfig(Pose(quat_wxyz_to_matrix(root_quat), root_pos), q))
        return cls(float(doc["fps"]), names, tuple(frames))

    def to_dict(self) -> dict:
        return {
            "fps": self.fps,
            "joint_names": list(self.joint_names),
            "frames": [
                {"root_pos": cfg.root.translation.tolist(),
                 "root_quat_wxyz": matrix_to_quat_wxyz(cfg.root.rotation).tolist(),
                 "q": cfg.q.tolist()}
                for cfg in self.frames
            ],
        }


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps(obj) -> str:
    """Deterministic JSON text; floats use the shortest repr that round-trips exactly."""
    return json.dumps(to_jsonable(obj), indent=1, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def load_motion(path) -> MotionSequence:
    return MotionSequence.from_dict(read_json(path))


def load_trajectory(path) -> RobotTrajectory:
    return RobotTrajectory.from_dict(read_json(path))
