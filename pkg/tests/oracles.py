"""Independent reference implementations used only by the test suite.

Everything here is deliberately written against a different code path than
the package under test: quaternions instead of Rodrigues, scipy's matrix
logarithm instead of closed-form inverses, characteristic-polynomial root
finding instead of LAPACK eigensolvers, and plain double loops instead of
vectorized gathers.  Slow is fine; independent is the point.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg


def manual_cross(a, b):
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def quaternion_rotation(axis, angle):
    """Rotation matrix built through unit quaternions (independent of Rodrigues)."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    w = math.cos(angle / 2.0)
    x, y, z = math.sin(angle / 2.0) * axis
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def se3_log(matrix):
    """Twist (v, w) recovered from a 4x4 pose matrix via scipy's logm."""
    lg = scipy.linalg.logm(np.asarray(matrix, dtype=complex))
    assert np.abs(lg.imag).max() < 1e-9
    lg = lg.real
    w = np.array([lg[2, 1], lg[0, 2], lg[1, 0]])
    v = lg[:3, 3]
    return np.concatenate([v, w])


def smallest_eigenpair_charpoly(s):
    """Smallest eigenvalue/vector of a symmetric 3x3 via the characteristic cubic.

    Roots come from numpy's companion-matrix solver (not LAPACK's symmetric
    path); the eigenvector is the best-conditioned cross product of rows of
    (S - lam*I).
    """
    s = np.asarray(s, dtype=float)
    c2 = -np.trace(s)
    c1 = (
        s[0, 0] * s[1, 1]
        + s[0, 0] * s[2, 2]
        + s[1, 1] * s[2, 2]
        - s[0, 1] ** 2
        - s[0, 2] ** 2
        - s[1, 2] ** 2
    )
    c0 = -np.linalg.det(s)
    roots = np.roots([1.0, c2, c1, c0])
    assert np.abs(roots.imag).max() < 1e-6 * max(1.0, np.abs(roots.real).max())
    lam = np.sort(roots.real)[0]
    m = s - lam * np.eye(3)
    candidates = [
        manual_cross(m[0], m[1]),
        manual_cross(m[0], m[2]),
        manual_cross(m[1], m[2]),
    ]
    norms = [np.linalg.norm(c) for c in candidates]
    best = candidates[int(np.argmax(norms))]
    n = np.linalg.norm(best)
    if n == 0.0:
        # fully degenerate; any direction is an eigenvector
        return lam, np.array([1.0, 0.0, 0.0])
    return lam, best / n


def eigvals_charpoly(s):
    """All three eigenvalues of a symmetric 3x3, ascending, via np.roots."""
    s = np.asarray(s, dtype=float)
    c2 = -np.trace(s)
    c1 = (
        s[0, 0] * s[1, 1]
        + s[0, 0] * s[2, 2]
        + s[1, 1] * s[2, 2]
        - s[0, 1] ** 2
        - s[0, 2] ** 2
        - s[1, 2] ** 2
    )
    c0 = -np.linalg.det(s)
    roots = np.roots([1.0, c2, c1, c0])
    return np.sort(roots.real)


def covariance_double_loop(points):
    """Centered covariance accumulated with explicit Python loops."""
    pts = [np.asarray(p, dtype=float) for p in points]
    k = len(pts)
    mean = np.zeros(3)
    for p in pts:
        mean += p
    mean /= k
    cov = np.zeros((3, 3))
    for p in pts:
        d = p - mean
        for i in range(3):
            for j in range(3):
                cov[i, j] += d[i] * d[j]
    return cov / k, mean


def angle_between(a, b):
    """Angle between two directions, sign-insensitive, in radians."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = abs(float(np.dot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.acos(min(1.0, c))


def euler_zyx(rotation):
    """(roll, pitch, yaw) about (x, y, z), composed as Rz @ Ry @ Rx."""
    r = np.asarray(rotation, dtype=float)
    pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    roll = math.atan2(r[2, 1], r[2, 2])
    yaw = math.atan2(r[1, 0], r[0, 0])
    return roll, pitch, yaw


def central_difference_rows(residual_fn, dim=6, step=1e-6):
    """Numeric Jacobian row of a scalar residual over a twist parameter."""
    row = np.zeros(dim)
    for k in range(dim):
        xp = np.zeros(dim)
        xp[k] = step
        xm = np.zeros(dim)
        xm[k] = -step
        row[k] = (residual_fn(xp) - residual_fn(xm)) / (2.0 * step)
    return row
