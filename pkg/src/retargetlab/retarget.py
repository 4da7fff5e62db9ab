"""Per-frame damped Gauss-Newton IK on the retargeting cost, and sequence retargeting.

The decision variables are the revolute joint angles plus (optionally) a
6-dof root perturbation applied by right-multiplying ``se3_exp(delta)`` onto
the root pose, with ``delta = (omega, v)``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from retargetlab.errors import DomainError, PreconditionError
from retargetlab.kinematics import JointConfig, RobotModel, link_transforms
from retargetlab.lie import Pose, se3_exp, skew, so3_left_jacobian_inv, so3_log
from retargetlab.objective import MappingConfig
from retargetlab.sequences import MotionSequence, RobotTrajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50
    damping_init: float = 1e-3
    damping_grow: float = 10.0
    damping_shrink: float = 0.5
    damping_max: float = 1e10
    step_clamp: float = 0.2
    cost_decrease_tol: float = 1e-10
    gradient_tol: float = 1e-8
    limit_margin: float = 0.0
    optimize_root: bool = True
    # second-order check at termination: a stationary point with an
    # indefinite cost Hessian is reported as a saddle, not as converged
    saddle_check: bool = True
    saddle_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("damping_init", "damping_grow", "damping_shrink", "damping_max", "step_clamp",
                     "cost_decrease_tol", "gradient_tol", "saddle_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.limit_margin < 0:
            raise ValueError("limit_margin must be non-negative")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SolverConfig":
        known = cls.__dataclass_fields__
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise ValueError(f"unknown solver options: {', '.join(unknown)}")
        return cls(**dict(doc))


@dataclass
class FrameDiagnostics:
    final_cost: float
    iterations: int
    converged: bool
    stalled_at_limit: bool = False
    at_saddle: bool = False
    min_hessian_eigenvalue: float | None = None
    rejected_steps: int = 0
    cost_history: list[float] = field(default_factory=list)
    error: str | None = None

    @property
    def monotone(self) -> bool:
        return all(b <= a for a, b in zip(self.cost_history, self.cost_history[1:]))


@dataclass(frozen=True, eq=False)
class RetargetResult:
    trajectory: RobotTrajectory
    per_frame: list[FrameDiagnostics]


class _Problem:
    """Residuals and their analytic Jacobian for one frame."""

    def __init__(self, model: RobotModel, mapping: MappingConfig, targets: Mapping[str, Pose], optimize_root: bool):
        self.model = model
        self.optimize_root = optimize_root
        self.terms = []
        for pair in mapping.pairs:
            if pair.human_body not in targets:
                raise PreconditionError(f"no target given for human body {pair.human_body!r}")
            self.terms.append((pair, model.link_index[pair.robot_body], targets[pair.human_body]))
        self.joint_links = [(li, k) for li, k in model._joint_of_link.items()]
        self.n = model.dof + (6 if optimize_root else 0)

    def residuals(self, root: Pose, q: np.ndarray, with_jacobian: bool = False):
        model = self.model
        rots, trans = link_transforms(model, JointConfig(root, q))
        rows, jrows = [], []
        if with_jacobian:
            axes = {li: rots[li] @ model.links[li].axis for li, _ in self.joint_links}
        for pair, i, tgt in self.terms:
            omega = so3_log(tgt.rotation.T @ rots[i])
            rows.append(math.sqrt(pair.w_R) * omega)
            if with_jacobian:
                # d omega = J_l^-1(omega) R_t^T (world angular perturbation of body i)
                a = math.sqrt(pair.w_R) * so3_left_jacobian_inv(omega) @ tgt.rotation.T
                jr = np.zeros((3, self.n))
                for li, k in self.joint_links:
                    if model.ancestor_joints[i, k]:
                        jr[:, k] = a @ axes[li]
                if self.optimize_root:
                    jr[:, model.dof:model.dof + 3] = a @ root.rotation
                jrows.append(jr)
            if pair.is_end_effector:
                sw = math.sqrt(pair.w_p)
                rows.append(sw * (tgt.translation - trans[i]))
                if with_jacobian:
                    jp = np.zeros((3, self.n))
                    for li, k in self.joint_links:
                        if model.ancestor_joints[i, k]:
                            jp[:, k] = -sw * np.cross(axes[li], trans[i] - trans[li])
                    if self.optimize_root:
                        rel = trans[i] - root.translation
                        jp[:, model.dof:model.dof + 3] = sw * skew(rel) @ root.rotation
                        jp[:, model.dof + 3:] = -sw * root.rotation
                    jrows.append(jp)
        r = np.concatenate(rows)
        if not with_jacobian:
            return r
        return r, np.vstack(jrows)

    def retract(self, root: Pose, q: np.ndarray, delta: np.ndarray) -> tuple[Pose, np.ndarray]:
        dof = self.model.dof
        q_new = q + delta[:dof]
        if self.optimize_root:
            root = root @ se3_exp(delta[dof:])
        return root, q_new

    def gradient(self, root: Pose, q: np.ndarray) -> np.ndarray:
        r, jac = self.residuals(root, q, with_jacobian=True)
        return 2.0 * jac.T @ r


def _cost_hessian(problem: _Problem, root: Pose, q: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central difference of the analytic gradient along the retraction coordinates."""
    n = problem.n
    hess = np.zeros((n, n))
    for k in range(n):
        d = np.zeros(n)
        d[k] = h
        gp = problem.gradient(*problem.retract(root, q, d))
        gm = problem.gradient(*problem.retract(root, q, -d))
        hess[:, k] = (gp - gm) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def solve_frame(
    model: RobotModel,
    mapping: MappingConfig,
    targets: Mapping[str, Pose],
    init: JointConfig,
    solver: SolverConfig | None = None,
) -> tuple[JointConfig, FrameDiagnostics]:
    """Minimize the per-frame retargeting cost from ``init``.

    Levenberg-damped Gauss-Newton: a trial step ``-(2 J^T J + lambda I)^-1 g``
    over the variables not pinned at a joint limit by the gradient is
    clamped per component, projected onto the joint limits and accepted
    only if it strictly lowers the cost; otherwise ``lambda`` grows. Hitting
    ``damping_max`` ends the solve as non-converged with the last accepted
    iterate.
    """
    solver = solver or SolverConfig()
    model.check_config(init)
    lo = model.lower + solver.limit_margin
    hi = model.upper - solver.limit_margin
    if np.any(lo > hi):
        raise ValueError("limit_margin leaves an empty joint range")
    if np.any(init.q < model.lower) or np.any(init.q > model.upper):
        raise PreconditionError("initial configuration violates joint limits")

    problem = _Problem(model, mapping, targets, solver.optimize_root)
    dof = model.dof
    root = init.root
    q = np.clip(init.q, lo, hi)
    r, jac = problem.residuals(root, q, with_jacobian=True)
    cost = float(r @ r)
    lam = solver.damping_init
    diag = FrameDiagnostics(final_cost=cost, iterations=0, converged=False, cost_history=[cost])

    def projected(g):
        gp = g.copy()
        at_lo = q[:] <= lo
        at_hi = q[:] >= hi
        gp[:dof][at_lo & (g[:dof] > 0)] = 0.0
        gp[:dof][at_hi & (g[:dof] < 0)] = 0.0
        return gp

    g = 2.0 * jac.T @ r
    for _ in range(solver.max_iterations):
        gp = projected(g)
        if np.max(np.abs(gp), initial=0.0) < solver.gradient_tol:
            diag.converged = True
            break
        diag.iterations += 1
        normal = 2.0 * jac.T @ jac
        # joints held at a bound by the gradient are dropped from the step
        free = np.ones(problem.n, dtype=bool)
        free[:dof] = ~(((q <= lo) & (g[:dof] > 0)) | ((q >= hi) & (g[:dof] < 0)))
        sub = np.ix_(free, free)
        accepted = False
        while lam <= solver.damping_max:
            step = np.zeros(problem.n)
            try:
                step[free] = np.linalg.solve(normal[sub] + lam * np.eye(int(free.sum())), -g[free])
            except np.linalg.LinAlgError:
                lam *= solver.damping_grow
                diag.rejected_steps += 1
                continue
            step = np.clip(step, -solver.step_clamp, solver.step_clamp)
            new_root, new_q = problem.retract(root, q, step)
            new_q = np.clip(new_q, lo, hi)
            try:
                new_r = problem.residuals(new_root, new_q)
                new_cost = float(new_r @ new_r)
            except DomainError:
                new_cost = math.inf
            if new_cost < cost:
                accepted = True
                lam = max(lam * solver.damping_shrink, 1e-12)
                break
            diag.rejected_steps += 1
            lam *= solver.damping_grow
        if not accepted:
            break
        decrease = cost - new_cost
        root, q, cost = new_root, new_q, new_cost
        diag.cost_history.append(cost)
        r, jac = problem.residuals(root, q, with_jacobian=True)
        g = 2.0 * jac.T @ r
        if decrease < solver.cost_decrease_tol:
            diag.converged = True
            break

    diag.final_cost = cost
    gp = projected(g)
    diag.stalled_at_limit = bool(np.any((gp[:dof] != g[:dof]) & (np.abs(g[:dof]) > solver.gradient_tol)))
    if diag.converged and solver.saddle_check and cost > 1e-12:
        hess = _cost_hessian(problem, root, q)
        free = np.ones(problem.n, dtype=bool)
        free[:dof] = (q > lo) & (q < hi)
        if free.any():
            lam_min = float(np.linalg.eigvalsh(hess[np.ix_(free, free)])[0])
            diag.min_hessian_eigenvalue = lam_min
            if lam_min < -solver.saddle_tol:
                diag.at_saddle = True
                diag.converged = False
    return JointConfig(root, q), diag


def default_init(model: RobotModel, mapping: MappingConfig, motion: MotionSequence) -> JointConfig:
    """Joints at mid-range; root at the first frame's target for the body mapped to the robot base."""
    root = Pose()
    for pair in mapping.pairs:
        if pair.robot_body == model.base:
            b = motion.body(pair.human_body)
            root = Pose(motion.rotations[0, b], motion.positions[0, b] * mapping.scale(pair.robot_body))
            break
    return JointConfig(root, model.mid_range())


def scaled_targets(motion: MotionSequence, mapping: MappingConfig, t: int) -> dict[str, Pose]:
    out = {}
    for pair in mapping.pairs:
        b = motion.body(pair.human_body)
        out[pair.human_body] = Pose(motion.rotations[t, b], motion.positions[t, b] * mapping.scale(pair.robot_body))
    return out


def _check_scales(mapping: MappingConfig) -> None:
    seen: dict[str, float] = {}
    for pair in mapping.pairs:
        s = mapping.scale(pair.robot_body)
        if seen.setdefault(pair.human_body, s) != s:
            raise ValueError(f"human body {pair.human_body!r} is mapped to robot bodies with different scales")


def retarget_sequence(
    model: RobotModel,
    mapping: MappingConfig,
    motion: MotionSequence,
    solver: SolverConfig | None = None,
    init: JointConfig | None = None,
    cold_restart: bool = False,
) -> RetargetResult:
    """Solve every frame, warm-starting each from the previous solution.

    With ``cold_restart=True`` every frame starts from ``init`` instead.
    Per-frame failures are recorded in the diagnostics and the frame keeps
    its starting configuration.
    """
    solver = solver or SolverConfig()
    if len(motion) == 0:
        raise ValueError("motion has no frames")
    mapping.validate(model)
    for pair in mapping.pairs:
        motion.body(pair.human_body)
    _check_scales(mapping)
    if init is None:
        init = default_init(model, mapping, motion)
    model.check_config(init)
    init = init.with_q(np.clip(init.q, model.lower, model.upper))

    frames, diags = [], []
    current = init
    for t in range(len(motion)):
        start = init if cold_restart else current
        try:
            cfg, diag = solve_frame(model, mapping, scaled_targets(motion, mapping, t), start, solver)
        except (DomainError, np.linalg.LinAlgError) as exc:
            log.warning("frame %d failed: %s", t, exc)
            cfg, diag = start, FrameDiagnostics(math.nan, 0, False, error=str(exc))
        frames.append(cfg)
        diags.append(diag)
        current = cfg
    traj = RobotTrajectory(motion.fps, model.joint_names, tuple(frames))
    return RetargetResult(traj, diags)
