"""SO(3) / SE(3) exponential and logarithm maps with left-Jacobian machinery.

Conventions:
    - Rotations are stored as 3x3 numpy arrays; quaternions only appear at
      file boundaries (see :mod:`retargetlab.sequences`).
    - Tangent vectors of SE(3) are stacked as ``(omega, v)``: rotation first,
      translation second.
    - Angles in radians, lengths in meters.

The logarithm is only defined on the open ball ``phi < pi``. Inputs within
``PI_EPS`` of the boundary are rejected with :class:`DomainError` rather than
resolved to one of the two antipodal branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from retargetlab.errors import DomainError

# below this angle every coefficient function switches to its Taylor series
SMALL_ANGLE = 1e-4
# distance from pi at which log / inverse Jacobian refuse to answer
PI_EPS = 1e-6


def skew(v) -> np.ndarray:
    """Hat operator: ``skew(v) @ u == np.cross(v, u)``."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew` (no skew-symmetry check)."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]], dtype=float)


def _as_vec3(omega) -> np.ndarray:
    w = np.asarray(omega, dtype=float).reshape(-1)
    if w.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {np.shape(omega)}")
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite entries in rotation vector")
    return w


def axis_rotation(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about ``axis`` (normalized here) by any real ``angle``.

    Unlike :func:`so3_exp` this accepts angles beyond pi; joint angles are
    not restricted to the log chart.
    """
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if norm == 0:
        raise ValueError("rotation axis must be nonzero")
    k = skew(axis / norm)
    s, c = math.sin(angle), math.cos(angle)
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def so3_exp(omega) -> np.ndarray:
    """Exponential map ``so(3) -> SO(3)`` restricted to ``|omega| < pi``."""
    w = _as_vec3(omega)
    phi = float(np.linalg.norm(w))
    if phi >= math.pi:
        raise DomainError(f"rotation angle {phi!r} is not below pi")
    W = skew(w)
    if phi < SMALL_ANGLE:
        p2 = phi * phi
        a = 1.0 - p2 / 6.0 + p2 * p2 / 120.0
        b = 0.5 - p2 / 24.0 + p2 * p2 / 720.0
    else:
        a = math.sin(phi) / phi
        b = 2.0 * math.sin(0.5 * phi) ** 2 / (phi * phi)
    return np.eye(3) + a * W + b * (W @ W)


def rotation_angle(r: np.ndarray) -> float:
    """Rotation angle in ``[0, pi]`` computed with atan2 for accuracy near 0 and pi."""
    r = np.asarray(r, dtype=float)
    s = 0.5 * float(np.linalg.norm(vee(r - r.T)))
    c = 0.5 * (float(np.trace(r)) - 1.0)
    return math.atan2(s, c)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Logarithm ``SO(3) -> so(3)``, returning ``omega = phi * n``.

    Raises:
        DomainError: if the rotation angle is within ``PI_EPS`` of pi, where
            the axis sign is ambiguous, or if ``r`` is not a rotation.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"expected a 3x3 rotation, got shape {r.shape}")
    if not is_rotation(r, 1e-6):
        raise DomainError("matrix is not a rotation (R^T R != I or det != 1)")
    phi = rotation_angle(r)
    if phi >= math.pi - PI_EPS:
        raise DomainError(f"rotation angle {phi!r} is within {PI_EPS} of pi")
    d = vee(r - r.T)
    if phi < SMALL_ANGLE:
        p2 = phi * phi
        # phi / (2 sin phi)
        scale = 0.5 * (1.0 + p2 / 6.0 + 7.0 * p2 * p2 / 360.0)
    else:
        scale = 0.5 * phi / math.sin(phi)
    return scale * d


def alpha_coefficient(phi: float) -> float:
    """``(phi/2) / tan(phi/2)``, the isotropic coefficient of the inverse left Jacobian.

    Strictly decreasing on ``[0, pi)`` from 1 toward 0.
    """
    phi = float(phi)
    if not 0.0 <= phi < math.pi:
        raise DomainError(f"alpha(phi) needs 0 <= phi < pi, got {phi!r}")
    if phi < SMALL_ANGLE:
        p2 = phi * phi
        return 1.0 - p2 / 12.0 - p2 * p2 / 720.0
    half = 0.5 * phi
    return half / math.tan(half)


def so3_left_jacobian(omega) -> np.ndarray:
    """Left Jacobian of SO(3).

    ``(sin phi / phi) I + (1 - sin phi / phi) n n^T + ((1 - cos phi) / phi) [n]x``
    """
    w = _as_vec3(omega)
    phi = float(np.linalg.norm(w))
    if phi >= math.pi:
        raise DomainError(f"rotation angle {phi!r} is not below pi")
    if phi < SMALL_ANGLE:
        W = skew(w)
        p2 = phi * phi
        a = 0.5 - p2 / 24.0 + p2 * p2 / 720.0
        b = 1.0 / 6.0 - p2 / 120.0 + p2 * p2 / 5040.0
        return np.eye(3) + a * W + b * (W @ W)
    n = w / phi
    sinc = math.sin(phi) / phi
    one_minus_cos = 2.0 * math.sin(0.5 * phi) ** 2
    return sinc * np.eye(3) + (1.0 - sinc) * np.outer(n, n) + (one_minus_cos / phi) * skew(n)


def so3_left_jacobian_inv(omega) -> np.ndarray:
    """Inverse left Jacobian of SO(3).

    ``alpha I + (1 - alpha) n n^T - (phi/2) [n]x`` with ``alpha = alpha_coefficient(phi)``.
    """
    w = _as_vec3(omega)
    phi = float(np.linalg.norm(w))
    if phi >= math.pi - PI_EPS:
        raise DomainError(f"inverse left Jacobian undefined at phi={phi!r} (within {PI_EPS} of pi)")
    if phi < SMALL_ANGLE:
        W = skew(w)
        p2 = phi * phi
        # (1 - alpha) / phi^2
        c = 1.0 / 12.0 + p2 / 720.0 + p2 * p2 / 30240.0
        return np.eye(3) - 0.5 * W + c * (W @ W)
    n = w / phi
    a = alpha_coefficient(phi)
    return a * np.eye(3) + (1.0 - a) * np.outer(n, n) - 0.5 * phi * skew(n)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping child-frame points into the parent frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        trans = np.array(self.translation, dtype=float).reshape(3)
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform a point ``(3,)`` or a batch ``(N, 3)``."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def __repr__(self) -> str:
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def se3_exp(xi) -> Pose:
    """Exponential map of SE(3) for ``xi = (omega, v)``."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    omega, v = xi[:3], xi[3:]
    return Pose(so3_exp(omega), so3_left_jacobian(omega) @ v)


def se3_log(pose: Pose) -> np.ndarray:
    """Logarithm of SE(3): ``(omega, J^-1(omega) t)``.

    ``v`` is the translational log-coordinate, which differs from the
    translation ``t`` whenever ``omega != 0``.
    """
    omega = so3_log(pose.rotation)
    v = so3_left_jacobian_inv(omega) @ pose.translation
    return np.concatenate([omega, v])


def is_rotation(r, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return bool(np.max(np.abs(r.T @ r - np.eye(3))) < tol and abs(np.linalg.det(r) - 1.0) < tol)


def rpy_to_matrix(rpy) -> np.ndarray:
    """Intrinsic x-y-z Euler angles: ``Rx(roll) @ Ry(pitch) @ Rz(yaw)``."""
    r, p, y = np.asarray(rpy, dtype=float).reshape(3)
    return axis_rotation((1, 0, 0), r) @ axis_rotation((0, 1, 0), p) @ axis_rotation((0, 0, 1), y)
