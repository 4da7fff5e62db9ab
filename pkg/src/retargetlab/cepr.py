"""Motion-data curation: human-sequence checks, robot-trajectory filters, clustering, sigma schedule.

Human checks (jerk, centre of mass over the support base, foot contact) run
on raw body-pose sequences. Robot filters (joint velocity, self-intersection,
floating feet) run on retargeted trajectories. Both return a
:class:`FilterReport` whose reasons are sorted by check name.

Threshold defaults for the human checks are implementation defaults, not
published values.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import MultiPoint, Point

from retargetlab.errors import PreconditionError
from retargetlab.kinematics import RobotModel, colliding_pairs, link_transforms
from retargetlab.sequences import MotionSequence, RobotTrajectory


@dataclass(frozen=True)
class CurationConfig:
    jerk_max: float = 500.0
    com_margin: float = 0.05
    contact_float_max: float = 0.10
    contact_penetration_max: float = 0.03
    min_contact_ratio: float = 0.3
    # foot points lower than this count towards the support polygon
    support_height: float = 0.02

    def __post_init__(self):
        for name in ("jerk_max", "com_margin", "contact_float_max", "contact_penetration_max", "support_height"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.min_contact_ratio <= 1:
            raise ValueError("min_contact_ratio must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class FilterConfig:
    """Robot-trajectory thresholds. ``qdot_max=None`` uses the model's velocity limits."""

    qdot_max: np.ndarray | float | None = None
    cross_ratio_max: float = 0.05
    float_threshold: float = 0.10

    def __post_init__(self):
        if self.qdot_max is not None and not np.all(np.asarray(self.qdot_max) > 0):
            raise ValueError("qdot_max must be positive")
        if not self.cross_ratio_max > 0 or not self.float_threshold > 0:
            raise ValueError("cross_ratio_max and float_threshold must be positive")


@dataclass(frozen=True)
class Reason:
    check: str
    value: float
    threshold: float
    frames: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"check": self.check, "value": self.value, "threshold": self.threshold, "frames": list(self.frames)}


@dataclass(frozen=True)
class FilterReport:
    verdict: str
    reasons: tuple[Reason, ...] = ()

    @property
    def keep(self) -> bool:
        return self.verdict == "keep"

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "reasons": [r.to_dict() for r in self.reasons]}


def _report(reasons: list[Reason]) -> FilterReport:
    reasons = sorted(reasons, key=lambda r: r.check)
    return FilterReport("reject" if reasons else "keep", tuple(reasons))


# --------------------------------------------------------------------------- human curation


def frame_jerk(positions: np.ndarray, fps: float) -> np.ndarray:
    """Max body-point jerk magnitude per stencil, shape ``(T - 3,)``.

    Entry ``t`` uses the four-point third difference over frames ``t..t+3``
    (centred at ``t + 1.5``).
    """
    d3 = positions[3:] - 3.0 * positions[2:-1] + 3.0 * positions[1:-2] - positions[:-3]
    return np.linalg.norm(d3, axis=-1).max(axis=-1) * fps**3


def center_of_mass(seq: MotionSequence, masses: Mapping[str, float]) -> np.ndarray:
    idx = [seq.body(name) for name in masses]
    w = np.array([masses[name] for name in masses], dtype=float)
    if w.sum() <= 0:
        raise ValueError("total mass must be positive")
    return np.einsum("tbk,b->tk", seq.positions[:, idx], w) / w.sum()


def support_distance(com_xy: np.ndarray, support_xy: np.ndarray) -> float:
    """Planar distance from the CoM to the convex hull of the support points (0 inside)."""
    hull = MultiPoint([tuple(p) for p in support_xy]).convex_hull
    return float(hull.distance(Point(*com_xy)))


def com_support_distances(seq: MotionSequence, masses: Mapping[str, float], feet: Sequence[str],
                          up_axis: str, support_height: float) -> np.ndarray:
    """Per-frame CoM distance outside the support hull; NaN for airborne frames."""
    up = 1 if up_axis == "Y" else 2
    plane = [0, 2] if up_axis == "Y" else [0, 1]
    com = center_of_mass(seq, masses)
    foot_idx = [seq.body(f) for f in feet]
    out = np.full(len(seq), np.nan)
    for t in range(len(seq)):
        pts = seq.positions[t, foot_idx]
        support = pts[pts[:, up] < support_height][:, plane]
        if len(support):
            out[t] = support_distance(com[t, plane], support)
    return out


def lowest_foot_heights(seq: MotionSequence, feet: Sequence[str], up_axis: str) -> np.ndarray:
    up = 1 if up_axis == "Y" else 2
    return seq.positions[:, [seq.body(f) for f in feet], up].min(axis=1)


def curate_human_sequence(
    seq: MotionSequence,
    masses: Mapping[str, float],
    feet: Sequence[str],
    config: CurationConfig | None = None,
    up_axis: str = "Z",
) -> FilterReport:
    """Reject physically implausible human motion.

    Checks, each producing a reason on failure:

    * ``jerk``: any four-frame third difference above ``jerk_max``.
    * ``com_support``: a grounded frame whose CoM lies more than
      ``com_margin`` outside the hull of foot points below ``support_height``.
    * ``contact_float``: fraction of frames whose lowest foot is within
      ``contact_float_max`` of the ground is below ``min_contact_ratio``.
    * ``contact_penetration``: any frame with the lowest foot deeper than
      ``contact_penetration_max`` below the ground.

    Foot bodies are treated as sole points; the ground is the plane at zero
    height along ``up_axis``.
    """
    config = config or CurationConfig()
    if len(seq) < 4:
        raise PreconditionError(f"jerk needs at least 4 frames, got {len(seq)}")
    if not feet:
        raise PreconditionError("at least one foot body is required")
    for f in feet:
        if f not in seq.body_names:
            raise PreconditionError(f"unknown foot body {f!r}")
    for b in masses:
        if b not in seq.body_names:
            raise PreconditionError(f"mass given for unknown body {b!r}")

    reasons = []
    jerk = frame_jerk(seq.positions, seq.fps)
    bad = np.flatnonzero(jerk > config.jerk_max)
    if bad.size:
        reasons.append(Reason("jerk", float(jerk.max()), config.jerk_max, tuple(int(i) for i in bad)))

    if masses:
        dist = com_support_distances(seq, masses, feet, up_axis, config.support_height)
        with np.errstate(invalid="ignore"):
            bad = np.flatnonzero(dist > config.com_margin)
        if bad.size:
            reasons.append(Reason("com_support", float(np.nanmax(dist)), config.com_margin,
                                  tuple(int(i) for i in bad)))

    low = lowest_foot_heights(seq, feet, up_axis)
    floating = low > config.contact_float_max
    ratio = 1.0 - float(floating.mean())
    if ratio < config.min_contact_ratio:
        reasons.append(Reason("contact_float", ratio, config.min_contact_ratio,
                              tuple(int(i) for i in np.flatnonzero(floating))))
    deep = np.flatnonzero(low < -config.contact_penetration_max)
    if deep.size:
        reasons.append(Reason("contact_penetration", float(-low.min()), config.contact_penetration_max,
                              tuple(int(i) for i in deep)))
    return _report(reasons)


# --------------------------------------------------------------------------- robot filtering


def joint_speeds(traj: RobotTrajectory) -> np.ndarray:
    """``|q_t - q_{t-1}| / dt`` with shape ``(T - 1, n)``; row ``t - 1`` belongs to frame ``t``."""
    return np.abs(np.diff(traj.q, axis=0)) * traj.fps


def self_intersecting_frames(traj: RobotTrajectory, model: RobotModel, exclude_hands: bool = False) -> np.ndarray:
    """Boolean per frame: any non-adjacent capsule pair interpenetrates."""
    return np.array([bool(colliding_pairs(model, cfg, exclude_hands)) for cfg in traj.frames], dtype=bool)


def lowest_foot_clearance(traj: RobotTrajectory, model: RobotModel) -> np.ndarray:
    """Per-frame height of the lowest foot-capsule surface point above the ground plane."""
    feet = [i for i, link in enumerate(model.links) if link.foot and link.capsules]
    if not feet:
        raise PreconditionError(f"model {model.name!r} flags no foot links with capsules")
    up = model.up_index
    out = np.empty(len(traj))
    for t, cfg in enumerate(traj.frames):
        rots, trans = link_transforms(model, cfg)
        low = math.inf
        for i in feet:
            for cap in model.links[i].capsules:
                ends = trans[i] + np.stack([cap.p0, cap.p1]) @ rots[i].T
                low = min(low, float(ends[:, up].min()) - cap.radius)
        out[t] = low
    return out


def filter_robot_sequence(traj: RobotTrajectory, model: RobotModel, config: FilterConfig | None = None) -> FilterReport:
    """Hard-threshold quality filter for a retargeted trajectory.

    * ``joint_velocity``: any inter-frame joint speed above ``qdot_max``.
    * ``self_intersection``: fraction of frames with an interpenetrating
      non-adjacent capsule pair above ``cross_ratio_max``.
    * ``floating``: mean lowest-foot clearance above ``float_threshold``
      (skipped for models without foot links).
    """
    config = config or FilterConfig()
    traj.check_model(model)
    reasons = []

    if len(traj) >= 2:
        limit = model.velocity_limits if config.qdot_max is None else np.broadcast_to(
            np.asarray(config.qdot_max, dtype=float), (model.dof,))
        speed = joint_speeds(traj)
        over = np.any(speed > limit, axis=1)
        if over.any():
            ratio = (speed / limit).max(axis=1)
            worst = int(np.argmax(ratio))
            j = int(np.argmax(speed[worst] / limit))
            reasons.append(Reason("joint_velocity", float(speed[worst, j]), float(limit[j]),
                                  tuple(int(i) + 1 for i in np.flatnonzero(over))))

    hits = self_intersecting_frames(traj, model)
    frac = float(hits.mean()) if len(traj) else 0.0
    if frac > config.cross_ratio_max:
        reasons.append(Reason("self_intersection", frac, config.cross_ratio_max,
                              tuple(int(i) for i in np.flatnonzero(hits))))

    if len(traj) and any(link.foot and link.capsules for link in model.links):
        clearance = lowest_foot_clearance(traj, model)
        mean = float(clearance.mean())
        if mean > config.float_threshold:
            reasons.append(Reason("floating", mean, config.float_threshold,
                                  tuple(int(i) for i in np.flatnonzero(clearance > config.float_threshold))))
    return _report(reasons)


# --------------------------------------------------------------------------- clustering


@dataclass(frozen=True, eq=False)
class Embedding:
    id: str
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"embedding {self.id!r} has non-finite entries")
        if np.linalg.norm(v) == 0:
            raise ValueError(f"embedding {self.id!r} is the zero vector")
        object.__setattr__(self, "vector", v)


@dataclass
class ClusterResult:
    labels: np.ndarray
    centroids: np.ndarray
    objective_history: list[float] = field(default_factory=list)
    iterations: int = 0


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding with cosine distance ``1 - x.c`` on the unit sphere."""
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    dist = 1.0 - x @ x[chosen[0]]
    for _ in range(1, k):
        d = np.clip(dist, 0.0, None)
        total = d.sum()
        if total <= 0:
            # all remaining points coincide with a centre: take the lowest unused index
            nxt = next(i for i in range(n) if i not in chosen)
        else:
            cdf = np.cumsum(d / total)
            nxt = int(np.searchsorted(cdf, rng.random(), side="right"))
            nxt = min(nxt, n - 1)
            while d[nxt] <= 0:
                nxt = int(np.argmax(d))
        chosen.append(nxt)
        dist = np.minimum(dist, 1.0 - x @ x[nxt])
    return x[chosen].copy()


def spherical_kmeans(vectors: np.ndarray, k: int, seed: int = 0, max_iter: int = 300) -> ClusterResult:
    """K-means on unit-normalized vectors maximizing within-cluster cosine similarity.

    Empty clusters are reseeded with the point least similar to its current
    centroid. Stops at an assignment fixpoint or after ``max_iter`` rounds.
    """
    x = np.asarray(vectors, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("expected a non-empty (N, d) array")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise ValueError(f"zero vector at index {int(np.flatnonzero(norms == 0)[0])}")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    x = x / norms[:, None]
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, k, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        sims = x @ centroids.T
        new_labels = np.argmax(sims, axis=1)
        for c in range(k):
            if not np.any(new_labels == c):
                own = sims[np.arange(n), new_labels]
                counts = np.bincount(new_labels, minlength=k)
                # only steal from clusters that would stay non-empty
                own = np.where(counts[new_labels] > 1, own, np.inf)
                far = int(np.argmin(own))
                new_labels[far] = c
        for c in range(k):
            s = x[new_labels == c].sum(axis=0)
            centroids[c] = s / np.linalg.norm(s) if np.linalg.norm(s) > 0 else x[new_labels == c][0]
        history.append(float(np.mean(np.sum(x * centroids[new_labels], axis=1))))
        if labels is not None and np.array_equal(labels, new_labels):
            labels = new_labels
            break
        labels = new_labels
    return ClusterResult(labels=labels, centroids=centroids, objective_history=history, iterations=it)


def cluster_motions(embeddings: Sequence[Embedding], k: int, seed: int = 0) -> list[tuple[str, int]]:
    """Assign each embedding id a cluster index by spherical k-means."""
    if not embeddings:
        raise ValueError("no embeddings given")
    res = spherical_kmeans(np.stack([e.vector for e in embeddings]), k, seed)
    return [(e.id, int(c)) for e, c in zip(embeddings, res.labels)]


# --------------------------------------------------------------------------- sigma schedule


@dataclass(frozen=True)
class SigmaScheduleParams:
    sigma_start: float
    sigma_end: float
    i0: int
    i_max: int

    def __post_init__(self):
        if not (self.sigma_start > 0 and self.sigma_end > 0):
            raise ValueError("sigma values must be positive")
        if not self.i0 < self.i_max:
            raise ValueError("i0 must be below i_max")


def sigma_schedule(params: SigmaScheduleParams, i: float) -> float:
    """Linear interpolation from ``sigma_start`` at ``i0`` to ``sigma_end`` at ``i_max``.

    ``i`` outside ``[i0, i_max]`` is clamped to the nearest endpoint.
    """
    s = (min(max(i, params.i0), params.i_max) - params.i0) / (params.i_max - params.i0)
    # convex-combination form: exact at both endpoints and at the midpoint
    return (1.0 - s) * params.sigma_start + s * params.sigma_end
