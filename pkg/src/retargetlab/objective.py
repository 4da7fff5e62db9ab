"""Retargeting costs, the Gauss-Newton / curvature Hessian split, and negative-curvature search.

Two cost families live here and are never mixed:

* :func:`frame_cost` is the per-frame retargeting objective summed over a body
  mapping, with no 1/2 factor.
* :func:`surrogate_cost` is the single-body weighted log-error cost
  ``0.5 * xi^T W xi`` used for curvature analysis.
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np

from retargetlab.errors import DomainError, PreconditionError
from retargetlab.kinematics import (
    JointConfig,
    RobotModel,
    body_pose,
    forward_kinematics,
    log_error,
    xi_jacobian,
)
from retargetlab.lie import Pose, so3_exp, so3_log

HESSIAN_STEP = 1e-4
NEGATIVE_TOL = 1e-6


@dataclass(frozen=True)
class CostWeights:
    """Rotational and translational weights of ``W = diag(w_R I3, w_p I3)``.

    Zero is allowed for one of the two so that position-only and
    rotation-only costs can be expressed; both zero is rejected.
    """

    w_R: float = 1.0
    w_p: float = 1.0

    def __post_init__(self):
        if not (self.w_R >= 0 and self.w_p >= 0) or not (self.w_R > 0 or self.w_p > 0):
            raise ValueError(f"weights must be non-negative with at least one positive, got {self}")

    def matrix(self) -> np.ndarray:
        return np.diag([self.w_R] * 3 + [self.w_p] * 3)


@dataclass(frozen=True)
class MappingPair:
    human_body: str
    robot_body: str
    w_R: float = 1.0
    w_p: float = 1.0
    is_end_effector: bool = False


@dataclass(frozen=True)
class MappingConfig:
    """Human-to-robot body correspondences with per-pair weights and per-body position scales."""

    pairs: tuple[MappingPair, ...]
    scales: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if not self.pairs:
            raise ValueError("mapping needs at least one pair")
        for p in self.pairs:
            if p.w_R < 0 or p.w_p < 0:
                raise ValueError(f"negative weight in pair {p}")
        for body, s in self.scales.items():
            if not s > 0:
                raise ValueError(f"scale for {body!r} must be positive, got {s!r}")

    def validate(self, model: RobotModel) -> None:
        for p in self.pairs:
            if p.robot_body not in model.link_index:
                raise ValueError(f"mapping refers to unknown robot body {p.robot_body!r}")
        for body in self.scales:
            if body not in model.link_index:
                raise ValueError(f"scale given for unknown robot body {body!r}")

    @property
    def human_bodies(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(p.human_body for p in self.pairs))

    def scale(self, robot_body: str) -> float:
        return float(self.scales.get(robot_body, 1.0))

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MappingConfig":
        pairs = [
            MappingPair(
                human_body=str(p["human_body"]),
                robot_body=str(p["robot_body"]),
                w_R=float(p.get("w_R", 1.0)),
                w_p=float(p.get("w_p", 1.0)),
                is_end_effector=bool(p.get("is_end_effector", False)),
            )
            for p in doc.get("pairs", [])
        ]
        return cls(tuple(pairs), {str(k): float(v) for k, v in (doc.get("scales") or {}).items()})

    def to_dict(self) -> dict:
        return {
            "pairs": [
                {"human_body": p.human_body, "robot_body": p.robot_body, "w_R": p.w_R, "w_p": p.w_p,
                 "is_end_effector": p.is_end_effector}
                for p in self.pairs
            ],
            "scales": dict(self.scales),
        }


@dataclass(frozen=True, eq=False)
class HessianBreakdown:
    gauss_newton: np.ndarray
    curvature_correction: np.ndarray
    total: np.ndarray


@dataclass(frozen=True, eq=False)
class MinCurvature:
    min_eigenvalue: float
    direction: np.ndarray


@dataclass(frozen=True, eq=False)
class CurvatureCertificate:
    """A witness ``u^T H u < 0`` of the surrogate cost at ``(config, target)``."""

    config: JointConfig
    target: Pose
    body: str
    direction: np.ndarray
    quadratic_form: float
    min_eigenvalue: float
    verified_quadratic_form: float
    source: str
    sample_index: int
    weights: CostWeights
    error_map: str

    def to_dict(self) -> dict:
        return {
            "body": self.body,
            "source": self.source,
            "sample_index": self.sample_index,
            "error_map": self.error_map,
            "weights": {"w_R": self.weights.w_R, "w_p": self.weights.w_p},
            "theta": self.config.q.tolist(),
            "root": {"rotation": self.config.root.rotation.tolist(),
                     "translation": self.config.root.translation.tolist()},
            "target": {"rotation": self.target.rotation.tolist(), "translation": self.target.translation.tolist()},
            "direction": self.direction.tolist(),
            "quadratic_form": self.quadratic_form,
            "min_eigenvalue": self.min_eigenvalue,
            "verified_quadratic_form": self.verified_quadratic_form,
        }


# --------------------------------------------------------------------------- per-frame cost


def frame_residuals(model: RobotModel, cfg: JointConfig, targets: Mapping[str, Pose],
                    mapping: MappingConfig) -> np.ndarray:
    """Stacked weighted residuals ``r`` with ``frame_cost == r @ r``.

    Rotation pairs contribute ``sqrt(w_R) * Log(R_target^T R_j)``; end-effector
    pairs additionally contribute ``sqrt(w_p) * (p_target - p_j)``.
    """
    fk = forward_kinematics(model, cfg)
    parts = []
    for pair in mapping.pairs:
        if pair.human_body not in targets:
            raise PreconditionError(f"no target given for human body {pair.human_body!r}")
        tgt = targets[pair.human_body]
        pose = fk[pair.robot_body]
        parts.append(math.sqrt(pair.w_R) * so3_log(tgt.rotation.T @ pose.rotation))
        if pair.is_end_effector:
            parts.append(math.sqrt(pair.w_p) * (tgt.translation - pose.translation))
    return np.concatenate(parts)


def frame_cost(model: RobotModel, cfg: JointConfig, targets: Mapping[str, Pose], mapping: MappingConfig) -> float:
    """Per-frame retargeting cost (no 1/2 factor)."""
    r = frame_residuals(model, cfg, targets, mapping)
    return float(r @ r)


# --------------------------------------------------------------------------- surrogate


def surrogate_cost(model: RobotModel, cfg: JointConfig, body: str, target: Pose, weights: CostWeights,
                   error_map: str = "se3") -> float:
    """``0.5 * (w_R |omega|^2 + w_p |v|^2)`` for the log error of ``body`` against ``target``."""
    xi = log_error(model, cfg, body, target, error_map)
    return 0.5 * (weights.w_R * float(xi[:3] @ xi[:3]) + weights.w_p * float(xi[3:] @ xi[3:]))


def surrogate_gradient(model: RobotModel, cfg: JointConfig, body: str, target: Pose, weights: CostWeights,
                       error_map: str = "se3") -> np.ndarray:
    """``J_xi^T W xi`` over the joint angles."""
    xi = log_error(model, cfg, body, target, error_map)
    jac = xi_jacobian(model, cfg, body, target, error_map)
    return jac.T @ (weights.matrix() @ xi)


def surrogate_hessian(model: RobotModel, cfg: JointConfig, body: str, target: Pose, weights: CostWeights,
                      error_map: str = "se3", h: float = HESSIAN_STEP) -> HessianBreakdown:
    """Split the surrogate Hessian into ``J^T W J`` and ``sum_a (W xi)_a Hess(xi_a)``.

    Each ``Hess(xi_a)`` is a central difference of ``J_xi`` columns with step
    ``h``. Both parts are symmetrized, so ``total`` equals their sum exactly.

    Raises:
        DomainError: if any stencil point leaves the log chart.
    """
    W = weights.matrix()
    xi = log_error(model, cfg, body, target, error_map)
    jac = xi_jacobian(model, cfg, body, target, error_map)
    gn = jac.T @ W @ jac
    gn = 0.5 * (gn + gn.T)

    q = cfg.q
    n = q.size
    # second[a, j, i] = d^2 xi_a / d theta_j d theta_i
    second = np.zeros((6, n, n))
    for i in range(n):
        dq = np.zeros(n)
        dq[i] = h
        jp = xi_jacobian(model, cfg.with_q(q + dq), body, target, error_map)
        jm = xi_jacobian(model, cfg.with_q(q - dq), body, target, error_map)
        second[:, :, i] = (jp - jm) / (2.0 * h)
    cc = np.tensordot(W @ xi, second, axes=1)
    cc = 0.5 * (cc + cc.T)
    return HessianBreakdown(gauss_newton=gn, curvature_correction=cc, total=gn + cc)


def min_curvature(hessian: HessianBreakdown | np.ndarray) -> MinCurvature:
    """Smallest eigenvalue of the total Hessian and its unit eigenvector.

    ``eigh`` returns eigenvalues in ascending order, so ties resolve to the
    lowest index. The eigenvector sign is fixed so its largest-magnitude
    component (first one on ties) is positive.
    """
    total = hessian.total if isinstance(hessian, HessianBreakdown) else np.asarray(hessian, dtype=float)
    vals, vecs = np.linalg.eigh(total)
    u = vecs[:, 0].copy()
    k = int(np.argmax(np.abs(u)))
    if u[k] < 0:
        u = -u
    return MinCurvature(float(vals[0]), u)


def fd_hessian(fun, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    n = x.size
    f0 = fun(x)
    hess = np.zeros((n, n))
    eye = np.eye(n) * h
    for i in range(n):
        hess[i, i] = (fun(x + eye[i]) - 2.0 * f0 + fun(x - eye[i])) / (h * h)
        for j in range(i + 1, n):
            v = (fun(x + eye[i] + eye[j]) - fun(x + eye[i] - eye[j])
                 - fun(x - eye[i] + eye[j]) + fun(x - eye[i] - eye[j])) / (4.0 * h * h)
            hess[i, j] = hess[j, i] = v
    return hess


# --------------------------------------------------------------------------- certification


@dataclass(frozen=True, eq=False)
class SearchConfig:
    """Sampling box for the certifier.

    ``config_box`` is ``(lower, upper)`` joint-angle arrays (defaults to the
    model limits). ``target_box`` holds the half-widths of the position
    offset (m) and rotation-vector offset (rad) applied to sampled targets.
    """

    seed: int = 0
    n_samples: int = 200
    config_box: tuple[np.ndarray, np.ndarray] | None = None
    target_box: tuple[float, float] = (0.5, math.pi / 2)


SOURCE_II_ANGLES = (0.6 * math.pi, 0.75 * math.pi, 0.9 * math.pi)
SOURCE_II_AXES = ((1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1))


def _chain_origin(model: RobotModel, cfg: JointConfig, body: str) -> np.ndarray:
    """World position of the first revolute joint on the path to ``body``."""
    i = model.link_index[body]
    path = []
    while i is not None:
        path.append(i)
        parent = model.links[i].parent
        i = None if parent is None else model.link_index[parent]
    first = next((j for j in reversed(path) if model.links[j].is_revolute), path[-1])
    return body_pose(model, cfg, model.links[first].name).translation


def analytic_probes(model: RobotModel, body: str, config_box=None) -> list[tuple[str, JointConfig, Pose]]:
    """Hand-built probe points for the two curvature sources.

    * ``source_i_interior``: extended chain, position target halfway between
      the chain origin and the body; ``source_i_exterior`` places it beyond
      the body along the same line.
    * ``source_ii[phi,axis]``: same configuration, target orientation rotated
      by ``phi`` in (pi/2, pi) so the log map is strongly curved.
    """
    lower, upper = (model.lower, model.upper) if config_box is None else config_box
    theta0 = np.clip(np.zeros(model.dof), lower, upper)
    cfg = JointConfig(Pose(), theta0)
    pose0 = body_pose(model, cfg, body)
    origin = _chain_origin(model, cfg, body)
    reach = pose0.translation - origin
    probes = [
        ("source_i_interior", cfg, Pose(pose0.rotation, origin + 0.5 * reach)),
        ("source_i_exterior", cfg, Pose(pose0.rotation, pose0.translation + 0.5 * reach)),
    ]
    for phi in SOURCE_II_ANGLES:
        for axis in SOURCE_II_AXES:
            a = np.asarray(axis, dtype=float)
            a /= np.linalg.norm(a)
            label = f"source_ii[phi={phi:.4f},axis={axis}]"
            probes.append((label, cfg, Pose(pose0.rotation @ so3_exp(phi * a), pose0.translation)))
    return probes


def _random_candidates(model: RobotModel, body: str, search: SearchConfig) -> Iterator[tuple[str, JointConfig, Pose]]:
    rng = np.random.default_rng(search.seed)
    lower, upper = (model.lower, model.upper) if search.config_box is None else search.config_box
    pos_hw, rot_hw = search.target_box
    for k in range(search.n_samples):
        theta = rng.uniform(lower, upper)
        theta_t = rng.uniform(lower, upper)
        d_pos = rng.uniform(-pos_hw, pos_hw, 3)
        d_rot = rng.uniform(-rot_hw, rot_hw, 3)
        norm = np.linalg.norm(d_rot)
        if norm >= math.pi - 1e-3:
            d_rot *= (math.pi - 1e-3) / norm
        anchor = body_pose(model, JointConfig(Pose(), theta_t), body)
        target = Pose(anchor.rotation @ so3_exp(d_rot), anchor.translation + d_pos)
        yield f"random[{k}]", JointConfig(Pose(), theta), target


def evaluate_candidate(model: RobotModel, body: str, weights: CostWeights, cfg: JointConfig, target: Pose,
                       error_map: str = "se3") -> MinCurvature | None:
    """Minimum curvature at one ``(theta, target)`` or ``None`` off the log chart."""
    try:
        return min_curvature(surrogate_hessian(model, cfg, body, target, weights, error_map))
    except DomainError:
        return None


def certify_negative_curvature(
    model: RobotModel,
    body: str,
    weights: CostWeights,
    search: SearchConfig | None = None,
    error_map: str = "se3",
    tol: float = NEGATIVE_TOL,
) -> CurvatureCertificate | None:
    """Search for a configuration/target pair where the surrogate Hessian is indefinite.

    Analytic probes are tried first, then ``search.n_samples`` seeded uniform
    samples. The first candidate whose minimum eigenvalue is below ``-tol``
    and whose eigen-direction also has negative curvature under an
    independent scalar finite-difference Hessian (step ``HESSIAN_STEP / 2``)
    is returned. Returns ``None`` when nothing qualifies.

    Raises:
        PreconditionError: if the model has fewer than two revolute joints.
    """
    if model.dof < 2:
        raise PreconditionError(f"negative-curvature certification needs n >= 2 joints; {model.name!r} has {model.dof}")
    if body not in model.link_index:
        raise ValueError(f"unknown body {body!r}")
    search = search or SearchConfig()

    def candidates():
        yield from analytic_probes(model, body, search.config_box)
        yield from _random_candidates(model, body, search)

    for index, (label, cfg, target) in enumerate(candidates()):
        try:
            hb = surrogate_hessian(model, cfg, body, target, weights, error_map)
        except DomainError:
            continue
        mc = min_curvature(hb)
        if not mc.min_eigenvalue < -tol:
            continue
        u = mc.direction
        quad = float(u @ hb.total @ u)

        def cost(theta, cfg=cfg, target=target):
            return surrogate_cost(model, cfg.with_q(theta), body, target, weights, error_map)

        try:
            check = fd_hessian(cost, cfg.q, 0.5 * HESSIAN_STEP)
        except DomainError:
            continue
        verified = float(u @ check @ u)
        if quad < 0 and verified < 0:
            return CurvatureCertificate(
                config=cfg, target=target, body=body, direction=u, quadratic_form=quad,
                min_eigenvalue=mc.min_eigenvalue, verified_quadratic_form=verified, source=label,
                sample_index=index, weights=weights, error_map=error_map,
            )
    return None
