"""Rigid-body transforms on SE(3) and their local parameterization.

Poses carry a 3x3 rotation and a 3-vector translation.  Incremental motion
is parameterized by a 6-vector twist ``(v, w)`` with the translational part
first; ``exp_map`` turns a twist into a pose via the closed-form Rodrigues
expansion, switching to the series limit for very small rotations.  Pose
updates during optimization left-multiply: ``T <- exp_map(dx) @ T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Below this rotation magnitude the Rodrigues coefficients are replaced by
# their series limits (sin t / t -> 1 etc.); the switch is continuous to
# machine precision.
_SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(a) @ b == cross(a, b)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


@dataclass(eq=False)
class Pose:
    """Rigid transform ``p_out = rotation @ p_in + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3].copy(), m[:3, 3].copy())

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """Transform composition: ``(a @ b)(p) = a(b(p))``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt.copy(), -(rt @ self.translation))

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to one point (3,) or a stack of points (n, 3)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation

    def orthonormalized(self) -> "Pose":
        """Project the rotation back onto SO(3) (nearest orthonormal factor)."""
        u, _, vt = np.linalg.svd(self.rotation)
        r = u @ vt
        if np.linalg.det(r) < 0.0:
            u[:, -1] = -u[:, -1]
            r = u @ vt
        return Pose(r, self.translation.copy())


def exp_map(twist: np.ndarray) -> Pose:
    """Exponential map from a twist ``(v, w)`` to a pose.

    Uses Rodrigues' formula for the rotation and the matching closed-form
    integral for the translation.  For ``|w| < 1e-8`` the series limit
    ``R = I + skew(w)``, ``t = v`` applies.
    """
    twist = np.asarray(twist, dtype=float)
    v = twist[:3]
    w = twist[3:]
    theta = np.linalg.norm(w)
    s = skew(w)
    if theta < _SMALL_ANGLE:
        return Pose(np.eye(3) + s, v.copy())
    s2 = s @ s
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    c = (theta - np.sin(theta)) / theta**3
    rot = np.eye(3) + a * s + b * s2
    vmat = np.eye(3) + b * s + c * s2
    return Pose(rot, vmat @ v)


def rotation_angle(rotation: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    c = (np.trace(rotation) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def pose_delta(a: Pose, b: Pose) -> tuple[float, float]:
    """Translation distance (m) and rotation distance (rad) from a to b."""
    err = a.inverse() @ b
    return float(np.linalg.norm(err.translation)), rotation_angle(err.rotation)
