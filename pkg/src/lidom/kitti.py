"""KITTI-convention I/O: Velodyne scan binaries, pose files, and the
per-point vertical calibration correction.

Scan files hold consecutive little-endian float32 quadruples
``(x, y, z, reflectance)``.  Pose files hold one pose per line as the
row-major upper 3x4 of the 4x4 matrix mapping frame-k coordinates into
frame 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lidom.geometry import Pose

CALIB_ANGLE_DEFAULT = math.radians(0.195)

_RECORD_BYTES = 16  # four little-endian float32 per point


class ScanFormatError(ValueError):
    """Raised for scan files whose byte length is not a whole number of records."""


class PoseFormatError(ValueError):
    """Raised for pose lines that do not parse as 12 finite floats."""


@dataclass
class RawScan:
    """One Velodyne sweep: points in the sensor frame plus bookkeeping."""

    points: np.ndarray  # (n, 3) float64
    reflectance: np.ndarray = field(default_factory=lambda: np.empty(0))
    frame_index: int = 0
    timestamp: float = 0.0


def read_scan(path, frame_index: int = 0, timestamp: float | None = None) -> RawScan:
    """Parse a KITTI .bin scan. Timestamp defaults to frame_index * 0.1 s."""
    raw = Path(path).read_bytes()
    if len(raw) % _RECORD_BYTES != 0:
        full = len(raw) - len(raw) % _RECORD_BYTES
        raise ScanFormatError(
            f"{path}: truncated record of {len(raw) - full} bytes "
            f"at byte offset {full} (length must be a multiple of {_RECORD_BYTES})"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return RawScan(
        points=data[:, :3].astype(np.float64),
        reflectance=data[:, 3].astype(np.float64),
        frame_index=frame_index,
        timestamp=0.1 * frame_index if timestamp is None else timestamp,
    )


def write_scan(path, points: np.ndarray, reflectance=None) -> None:
    """Companion writer for read_scan (test fixtures, synthetic sequences)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if reflectance is None:
        refl = np.zeros(pts.shape[0])
    else:
        refl = np.asarray(reflectance, dtype=np.float64).reshape(-1)
        if refl.shape[0] != pts.shape[0]:
            raise ValueError("reflectance length does not match point count")
    data = np.column_stack([pts, refl]).astype("<f4")
    Path(path).write_bytes(data.tobytes())


def apply_calib_correction(scan: RawScan, angle: float = CALIB_ANGLE_DEFAULT) -> RawScan:
    """Shift every point's elevation by ``angle``, preserving range and azimuth.

    Compensates the constant vertical bias of the sensor mount; the default
    tilts beams up by 0.195 degrees.
    """
    if angle == 0.0 or scan.points.shape[0] == 0:
        return RawScan(
            scan.points.copy(), scan.reflectance.copy(), scan.frame_index, scan.timestamp
        )
    pts = scan.points
    r = np.linalg.norm(pts, axis=1)
    safe = r > 0.0
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    phi = np.arcsin(np.clip(np.divide(pts[:, 2], r, where=safe, out=np.zeros_like(r)), -1.0, 1.0))
    phi = phi + angle
    cos_phi = np.cos(phi)
    out = np.column_stack(
        [
            r * cos_phi * np.cos(theta),
            r * cos_phi * np.sin(theta),
            r * np.sin(phi),
        ]
    )
    out[~safe] = pts[~safe]
    return RawScan(out, scan.reflectance.copy(), scan.frame_index, scan.timestamp)


def write_poses(trajectory, path) -> None:
    """Write KITTI pose lines; 12 significant digits per entry."""
    lines = []
    for i, pose in enumerate(trajectory):
        m = pose.matrix()[:3, :]
        flat = m.reshape(-1)
        if not np.all(np.isfinite(flat)):
            raise PoseFormatError(f"pose {i} has non-finite entries")
        lines.append(" ".join(format(x, ".12g") for x in flat))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_poses(path) -> list[Pose]:
    poses = []
    for ln, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 12:
            raise PoseFormatError(f"{path}:{ln + 1}: expected 12 values, got {len(parts)}")
        try:
            vals = np.array([float(p) for p in parts])
        except ValueError as exc:
            raise PoseFormatError(f"{path}:{ln + 1}: {exc}") from exc
        if not np.all(np.isfinite(vals)):
            raise PoseFormatError(f"{path}:{ln + 1}: non-finite pose entry")
        m = vals.reshape(3, 4)
        poses.append(Pose(m[:, :3].copy(), m[:, 3].copy()))
    return poses
