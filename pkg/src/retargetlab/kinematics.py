"""Kinematic trees: model loading, forward kinematics, log-error Jacobians, capsules.

A model is a tree of links rooted at a single floating base. Every non-base
link hangs off its parent through either a fixed or a revolute joint; the
joint's coordinate is the link's own angle. The base link's world pose is the
configuration's root pose.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from retargetlab.errors import DomainError, ModelError
from retargetlab.lie import Pose, axis_rotation, rpy_to_matrix, se3_log, so3_log

FD_STEP = 1e-6
ERROR_MAPS = ("se3", "decoupled")


@dataclass(frozen=True, eq=False)
class Capsule:
    """Segment ``p0 -> p1`` swept by a ball of ``radius`` (meters)."""

    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float).reshape(3))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float).reshape(3))
        if not self.radius > 0:
            raise ValueError(f"capsule radius must be positive, got {self.radius!r}")

    def transformed(self, pose: Pose) -> "Capsule":
        return Capsule(pose.apply(self.p0), pose.apply(self.p1), self.radius)


@dataclass(frozen=True)
class JointLimits:
    lower: float
    upper: float
    velocity: float


@dataclass(frozen=True, eq=False)
class Link:
    name: str
    parent: str | None
    joint_type: str = "fixed"
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    origin: Pose = field(default_factory=Pose)
    limits: JointLimits | None = None
    mass: float = 0.0
    com: np.ndarray = field(default_factory=lambda: np.zeros(3))
    capsules: tuple[Capsule, ...] = ()
    hand: bool = False
    foot: bool = False

    @property
    def is_revolute(self) -> bool:
        return self.joint_type == "revolute"


@dataclass(frozen=True, eq=False)
class JointConfig:
    """Root pose plus one angle per revolute joint (model order)."""

    root: Pose
    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        if not np.all(np.isfinite(q)):
            raise ValueError("joint configuration contains NaN or inf")
        q.flags.writeable = False
        object.__setattr__(self, "q", q)

    def with_q(self, q) -> "JointConfig":
        return JointConfig(self.root, q)


@dataclass(frozen=True, eq=False)
class FKResult:
    body_poses: dict[str, Pose]

    def __getitem__(self, name: str) -> Pose:
        return self.body_poses[name]

    def position(self, name: str) -> np.ndarray:
        return self.body_poses[name].translation


@dataclass(frozen=True, eq=False)
class RobotModel:
    name: str
    up_axis: str
    links: tuple[Link, ...]

    @cached_property
    def link_index(self) -> dict[str, int]:
        return {link.name: i for i, link in enumerate(self.links)}

    @cached_property
    def order(self) -> tuple[int, ...]:
        """Link indices with every parent before its children."""
        return _topological_order(self.links)

    @cached_property
    def base(self) -> str:
        return next(link.name for link in self.links if link.parent is None)

    @cached_property
    def joint_names(self) -> tuple[str, ...]:
        return tuple(link.name for link in self.links if link.is_revolute)

    @property
    def dof(self) -> int:
        return len(self.joint_names)

    @cached_property
    def _joint_of_link(self) -> dict[int, int]:
        out = {}
        for i, link in enumerate(self.links):
            if link.is_revolute:
                out[i] = len(out)
        return out

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([self.links[self.link_index[n]].limits.lower for n in self.joint_names])

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([self.links[self.link_index[n]].limits.upper for n in self.joint_names])

    @cached_property
    def velocity_limits(self) -> np.ndarray:
        return np.array([self.links[self.link_index[n]].limits.velocity for n in self.joint_names])

    def mid_range(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @cached_property
    def ancestor_joints(self) -> np.ndarray:
        """Boolean ``(n_links, dof)``: joint ``k`` lies on the path from base to link ``i``."""
        mask = np.zeros((len(self.links), self.dof), dtype=bool)
        for i in self.order:
            link = self.links[i]
            if link.parent is not None:
                mask[i] = mask[self.link_index[link.parent]]
            if i in self._joint_of_link:
                mask[i, self._joint_of_link[i]] = True
        return mask

    @cached_property
    def up_index(self) -> int:
        return 1 if self.up_axis == "Y" else 2

    @cached_property
    def ground_indices(self) -> tuple[int, int]:
        """World axes spanning the ground plane (XZ under Y-up, XY under Z-up)."""
        return (0, 2) if self.up_axis == "Y" else (0, 1)

    @cached_property
    def collision_pairs(self) -> tuple[tuple[int, int], ...]:
        """Pairs of capsule-bearing links that are not adjacent.

        Adjacency is parent/child after collapsing capsule-less links, so a
        thigh hanging off the pelvis through a zero-size hip link is still
        adjacent to the pelvis.
        """
        coll_parent: dict[int, int | None] = {}
        for i in self.order:
            parent = self.links[i].parent
            p = None if parent is None else self.link_index[parent]
            while p is not None and not self.links[p].capsules:
                pp = self.links[p].parent
                p = None if pp is None else self.link_index[pp]
            coll_parent[i] = p
        bearing = [i for i, link in enumerate(self.links) if link.capsules]
        pairs = []
        for a_pos, a in enumerate(bearing):
            for b in bearing[a_pos + 1:]:
                if coll_parent[a] == b or coll_parent[b] == a:
                    continue
                pairs.append((a, b))
        return tuple(pairs)

    def check_config(self, cfg: JointConfig) -> None:
        if cfg.q.shape != (self.dof,):
            raise ValueError(f"model {self.name!r} has {self.dof} joints, configuration has {cfg.q.shape[0]}")

    def clip(self, q) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.lower, self.upper)


def _topological_order(links) -> tuple[int, ...]:
    index = {link.name: i for i, link in enumerate(links)}
    children: dict[int, list[int]] = {i: [] for i in range(len(links))}
    roots = []
    for i, link in enumerate(links):
        if link.parent is None:
            roots.append(i)
        else:
            children[index[link.parent]].append(i)
    order = []
    stack = list(reversed(roots))
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(reversed(children[i]))
    if len(order) != len(links):
        unreached = sorted(set(range(len(links))) - set(order))
        names = ", ".join(links[i].name for i in unreached)
        raise ModelError(f"links not connected to the base (cycle?): {names}", "links")
    return tuple(order)


# --------------------------------------------------------------------------- loading


def _vec(node, path: str, size: int = 3, default=None) -> np.ndarray:
    if node is None:
        if default is None:
            raise ModelError("missing value", path)
        return np.array(default, dtype=float)
    try:
        v = np.asarray(node, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ModelError(f"expected {size} numbers", path) from None
    if v.shape != (size,) or not np.all(np.isfinite(v)):
        raise ModelError(f"expected {size} finite numbers, got {node!r}", path)
    return v


def _number(node, path: str) -> float:
    if isinstance(node, bool) or not isinstance(node, (int, float)) or not math.isfinite(node):
        raise ModelError(f"expected a finite number, got {node!r}", path)
    return float(node)


def _parse_link(node, path: str) -> Link:
    if not isinstance(node, Mapping):
        raise ModelError("link must be an object", path)
    name = node.get("name")
    if not isinstance(name, str) or not name:
        raise ModelError("link needs a non-empty string name", f"{path}.name")
    parent = node.get("parent")
    if parent is not None and not isinstance(parent, str):
        raise ModelError("parent must be a link name or null", f"{path}.parent")

    joint = node.get("joint") or {}
    if not isinstance(joint, Mapping):
        raise ModelError("joint must be an object", f"{path}.joint")
    jtype = joint.get("type", "fixed")
    if jtype not in ("fixed", "revolute"):
        raise ModelError(f"unsupported joint type {jtype!r} (fixed|revolute)", f"{path}.joint.type")
    origin_node = joint.get("origin") or {}
    xyz = _vec(origin_node.get("xyz"), f"{path}.joint.origin.xyz", default=(0, 0, 0))
    rpy = _vec(origin_node.get("rpy"), f"{path}.joint.origin.rpy", default=(0, 0, 0))
    origin = Pose(rpy_to_matrix(rpy), xyz)

    axis = np.array([0.0, 0.0, 1.0])
    limits = None
    if jtype == "revolute":
        axis = _vec(joint.get("axis"), f"{path}.joint.axis")
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise ModelError("joint axis must be nonzero", f"{path}.joint.axis")
        axis = axis / norm
        lim = joint.get("limits")
        if not isinstance(lim, Mapping):
            raise ModelError(f"revolute joint {name!r} needs limits", f"{path}.joint.limits")
        lower = _number(lim.get("lower"), f"{path}.joint.limits.lower")
        upper = _number(lim.get("upper"), f"{path}.joint.limits.upper")
        vel = _number(lim.get("velocity"), f"{path}.joint.limits.velocity")
        if not lower < upper:
            raise ModelError(f"joint {name!r}: lower limit {lower} is not below upper limit {upper}",
                             f"{path}.joint.limits")
        if not vel > 0:
            raise ModelError(f"joint {name!r}: velocity limit must be positive", f"{path}.joint.limits.velocity")
        limits = JointLimits(lower, upper, vel)

    mass = _number(node.get("mass", 0.0), f"{path}.mass")
    if mass < 0:
        raise ModelError("mass must be non-negative", f"{path}.mass")
    com = _vec(node.get("com"), f"{path}.com", default=(0, 0, 0))
    capsules = []
    for c_i, cap in enumerate(node.get("capsules") or []):
        cpath = f"{path}.capsules[{c_i}]"
        if not isinstance(cap, Mapping):
            raise ModelError("capsule must be an object", cpath)
        radius = _number(cap.get("radius"), f"{cpath}.radius")
        if radius <= 0:
            raise ModelError("capsule radius must be positive", f"{cpath}.radius")
        capsules.append(Capsule(_vec(cap.get("p0"), f"{cpath}.p0"), _vec(cap.get("p1"), f"{cpath}.p1"), radius))
    return Link(
        name=name,
        parent=parent,
        joint_type=jtype,
        axis=axis,
        origin=origin,
        limits=limits,
        mass=mass,
        com=com,
        capsules=tuple(capsules),
        hand=bool(node.get("hand", False)),
        foot=bool(node.get("foot", False)),
    )


def load_model(document) -> RobotModel:
    """Parse and validate a robot-model document.

    Args:
        document: JSON text, or an already-decoded mapping, following the
            schema ``{name, up_axis, links: [{name, parent, joint, mass, com,
            capsules, hand?, foot?}]}``.

    Raises:
        ModelError: with a path such as ``links[2].joint.limits`` locating the
            first violation.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ModelError(f"invalid JSON: {exc}") from None
    if not isinstance(document, Mapping):
        raise ModelError("model document must be an object")
    name = document.get("name")
    if not isinstance(name, str):
        raise ModelError("model needs a string name", "name")
    up_axis = document.get("up_axis", "Z")
    if up_axis not in ("Y", "Z"):
        raise ModelError(f"up_axis must be 'Y' or 'Z', got {up_axis!r}", "up_axis")
    raw_links = document.get("links")
    if not isinstance(raw_links, list) or not raw_links:
        raise ModelError("links must be a non-empty list", "links")

    links = [_parse_link(node, f"links[{i}]") for i, node in enumerate(raw_links)]
    seen = {}
    for i, link in enumerate(links):
        if link.name in seen:
            raise ModelError(f"duplicate link name {link.name!r}", f"links[{i}].name")
        seen[link.name] = i
    bases = [i for i, link in enumerate(links) if link.parent is None]
    if len(bases) != 1:
        raise ModelError(f"expected exactly one base link (parent null), found {len(bases)}", "links")
    base = links[bases[0]]
    if base.is_revolute:
        raise ModelError("the floating base cannot carry a revolute joint", f"links[{bases[0]}].joint.type")
    if not np.allclose(base.origin.matrix(), np.eye(4)):
        raise ModelError("the base link origin must be the identity", f"links[{bases[0]}].joint.origin")
    for i, link in enumerate(links):
        if link.parent is not None and link.parent not in seen:
            raise ModelError(f"unknown parent {link.parent!r}", f"links[{i}].parent")
    _topological_order(links)
    return RobotModel(name=name, up_axis=up_axis, links=tuple(links))


def load_model_file(path) -> RobotModel:
    path = Path(path)
    try:
        return load_model(path.read_text(encoding="utf-8"))
    except ModelError as exc:
        raise ModelError(str(exc), f"{path}") from None


def fixture_path(name: str) -> Path:
    """Path of a bundled data file, e.g. ``fixture_path("planar2.json")``."""
    return Path(str(resources.files("retargetlab") / "data" / name))


def load_fixture(name: str) -> RobotModel:
    """Load a bundled model: ``planar2``, ``wrist2``, ``toy_humanoid``."""
    return load_model_file(fixture_path(f"{name}.json"))


# --------------------------------------------------------------------------- FK


def link_transforms(model: RobotModel, cfg: JointConfig) -> tuple[np.ndarray, np.ndarray]:
    """World rotations ``(L, 3, 3)`` and translations ``(L, 3)`` in model link order."""
    model.check_config(cfg)
    n = len(model.links)
    rots = np.empty((n, 3, 3))
    trans = np.empty((n, 3))
    joint_of = model._joint_of_link
    index = model.link_index
    for i in model.order:
        link = model.links[i]
        if link.parent is None:
            rots[i] = cfg.root.rotation
            trans[i] = cfg.root.translation
            continue
        p = index[link.parent]
        r = rots[p] @ link.origin.rotation
        trans[i] = rots[p] @ link.origin.translation + trans[p]
        if i in joint_of:
            r = r @ axis_rotation(link.axis, cfg.q[joint_of[i]])
        rots[i] = r
    return rots, trans


def forward_kinematics(model: RobotModel, cfg: JointConfig) -> FKResult:
    """World pose of every link for configuration ``cfg``."""
    rots, trans = link_transforms(model, cfg)
    return FKResult({link.name: Pose(rots[i], trans[i]) for i, link in enumerate(model.links)})


def body_pose(model: RobotModel, cfg: JointConfig, body: str) -> Pose:
    if body not in model.link_index:
        raise KeyError(f"unknown body {body!r} in model {model.name!r}")
    rots, trans = link_transforms(model, cfg)
    i = model.link_index[body]
    return Pose(rots[i], trans[i])


def world_capsules(model: RobotModel, rots: np.ndarray, trans: np.ndarray) -> dict[int, list[Capsule]]:
    out = {}
    for i, link in enumerate(model.links):
        if link.capsules:
            pose = Pose(rots[i], trans[i])
            out[i] = [c.transformed(pose) for c in link.capsules]
    return out


# --------------------------------------------------------------------------- log error


def pose_error(pose: Pose, target: Pose, error_map: str = "se3") -> np.ndarray:
    """Lift ``E = target^-1 * pose`` to a 6-vector ``(omega, v)``.

    ``error_map="se3"`` uses the SE(3) logarithm. ``"decoupled"`` keeps the
    rotational log but uses the raw translation of ``E`` (Euclidean position
    error expressed in the target frame), dropping the log-map coupling.
    """
    err = target.inverse() @ pose
    if error_map == "se3":
        return se3_log(err)
    if error_map == "decoupled":
        return np.concatenate([so3_log(err.rotation), err.translation])
    raise ValueError(f"unknown error_map {error_map!r}; expected one of {ERROR_MAPS}")


def log_error(model: RobotModel, cfg: JointConfig, body: str, target: Pose, error_map: str = "se3") -> np.ndarray:
    return pose_error(body_pose(model, cfg, body), target, error_map)


def xi_jacobian(
    model: RobotModel,
    cfg: JointConfig,
    body: str,
    target: Pose,
    error_map: str = "se3",
    h: float = FD_STEP,
) -> np.ndarray:
    """Jacobian ``d xi / d theta`` (6 x dof) by central differences over joint angles.

    The root pose is held fixed.

    Raises:
        DomainError: if a stencil point leaves the log chart.
    """
    q = cfg.q
    jac = np.zeros((6, q.size))
    for k in range(q.size):
        dq = np.zeros_like(q)
        dq[k] = h
        try:
            plus = log_error(model, cfg.with_q(q + dq), body, target, error_map)
            minus = log_error(model, cfg.with_q(q - dq), body, target, error_map)
        except DomainError as exc:
            raise DomainError(f"finite-difference stencil on joint {k} crosses the log branch: {exc}") from None
        jac[:, k] = (plus - minus) / (2.0 * h)
    return jac


def position_jacobian(model: RobotModel, cfg: JointConfig, body: str) -> np.ndarray:
    """Analytic world-frame translational Jacobian ``(3, dof)`` of ``body``."""
    rots, trans = link_transforms(model, cfg)
    i = model.link_index[body]
    jac = np.zeros((3, model.dof))
    for li, k in model._joint_of_link.items():
        if model.ancestor_joints[i, k]:
            axis = rots[li] @ model.links[li].axis
            jac[:, k] = np.cross(axis, trans[i] - trans[li])
    return jac


# --------------------------------------------------------------------------- capsules


def closest_segment_params(p0, p1, q0, q1) -> tuple[float, float]:
    """Parameters ``(s, t)`` in [0, 1] of the closest points on two segments."""
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    eps = 1e-15
    if a <= eps and e <= eps:
        return 0.0, 0.0
    if a <= eps:
        return 0.0, min(max(f / e, 0.0), 1.0)
    c = float(d1 @ r)
    if e <= eps:
        return min(max(-c / a, 0.0), 1.0), 0.0
    b = float(d1 @ d2)
    denom = a * e - b * b
    s = min(max((b * f - c * e) / denom, 0.0), 1.0) if denom > eps * a * e else 0.0
    t = (b * s + f) / e
    if t < 0.0:
        t = 0.0
        s = min(max(-c / a, 0.0), 1.0)
    elif t > 1.0:
        t = 1.0
        s = min(max((b - c) / a, 0.0), 1.0)
    return s, t


def segment_distance(p0, p1, q0, q1) -> float:
    p0, p1, q0, q1 = (np.asarray(x, dtype=float) for x in (p0, p1, q0, q1))
    s, t = closest_segment_params(p0, p1, q0, q1)
    return float(np.linalg.norm((p0 + s * (p1 - p0)) - (q0 + t * (q1 - q0))))


def capsule_distance(a: Capsule, b: Capsule) -> float:
    """Signed surface distance between two world-frame capsules; negative means penetration."""
    key_a = (*a.p0, *a.p1, a.radius)
    key_b = (*b.p0, *b.p1, b.radius)
    # canonical argument order makes d(a, b) == d(b, a) bit for bit
    if key_b < key_a:
        a, b = b, a
    return segment_distance(a.p0, a.p1, b.p0, b.p1) - (a.radius + b.radius)


def colliding_pairs(model: RobotModel, cfg: JointConfig, exclude_hands: bool = False) -> list[tuple[str, str]]:
    """Non-adjacent link pairs whose capsules interpenetrate at ``cfg``."""
    rots, trans = link_transforms(model, cfg)
    caps = world_capsules(model, rots, trans)
    hits = []
    for a, b in model.collision_pairs:
        if exclude_hands and (model.links[a].hand or model.links[b].hand):
            continue
        if any(capsule_distance(ca, cb) < 0.0 for ca in caps[a] for cb in caps[b]):
            hits.append((model.links[a].name, model.links[b].name))
    return hits
