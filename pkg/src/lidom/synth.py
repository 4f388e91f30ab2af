"""Synthetic LiDAR scenes with exact ground truth.

Scenes are small collections of analytic primitives (infinite planes,
axis-aligned boxes, vertical cylinders).  A simulated sweep ray-casts a
uniform beam pattern from an arbitrary pose and returns sensor-frame
points together with the exact surface normal and a ground flag per
point, which downstream tests use as oracles.  Range noise, when
requested, is injected along each ray after the truth is captured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lidom.geometry import Pose
from lidom.kitti import RawScan

_EPS = 1e-9


@dataclass
class Plane:
    """Infinite plane {x : normal . x = offset}."""

    normal: np.ndarray
    offset: float
    is_ground: bool = False

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        self.normal = n / np.linalg.norm(n)

    def intersect(self, origin, dirs):
        denom = dirs @ self.normal
        num = self.offset - origin @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
        t = np.where(t > _EPS, t, np.inf)
        normals = np.broadcast_to(self.normal, (dirs.shape[0], 3))
        return t, normals


@dataclass
class Box:
    """Axis-aligned box; rays hit the entering face."""

    min_corner: np.ndarray
    max_corner: np.ndarray
    is_ground: bool = False

    def __post_init__(self):
        self.min_corner = np.asarray(self.min_corner, dtype=float)
        self.max_corner = np.asarray(self.max_corner, dtype=float)

    def intersect(self, origin, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (self.min_corner - origin) * inv
            t2 = (self.max_corner - origin) * inv
        lo = np.fmin(t1, t2)
        hi = np.fmax(t1, t2)
        tnear = np.max(lo, axis=1)
        tfar = np.min(hi, axis=1)
        axis = np.argmax(lo, axis=1)
        hit = (tnear <= tfar) & (tnear > _EPS)
        t = np.where(hit, tnear, np.inf)
        normals = np.zeros((dirs.shape[0], 3))
        rows = np.arange(dirs.shape[0])
        normals[rows, axis] = -np.sign(dirs[rows, axis])
        return t, normals


@dataclass
class Cylinder:
    """Vertical cylinder (side surface only, optional z extent)."""

    center_x: float
    center_y: float
    radius: float
    z_min: float = -math.inf
    z_max: float = math.inf
    is_ground: bool = False

    def intersect(self, origin, dirs):
        ox = origin[0] - self.center_x
        oy = origin[1] - self.center_y
        dx = dirs[:, 0]
        dy = dirs[:, 1]
        a = dx * dx + dy * dy
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - self.radius * self.radius
        disc = b * b - 4.0 * a * c
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.where(disc >= 0.0, disc, np.nan))
            t = (-b - sq) / (2.0 * a)
        z = origin[2] + t * dirs[:, 2]
        ok = (disc >= 0.0) & (a > 1e-12) & (t > _EPS) & (z >= self.z_min) & (z <= self.z_max)
        t = np.where(ok, t, np.inf)
        hits = origin + t[:, None] * dirs
        normals = np.zeros((dirs.shape[0], 3))
        with np.errstate(invalid="ignore"):
            normals[:, 0] = (hits[:, 0] - self.center_x) / self.radius
            normals[:, 1] = (hits[:, 1] - self.center_y) / self.radius
        normals[~ok] = 0.0
        return t, normals


@dataclass
class SceneSpec:
    """Primitives plus the range-noise amplitude applied to simulated sweeps."""

    primitives: list = field(default_factory=list)
    noise: float = 0.0


@dataclass
class SimulatedScan:
    """A sweep plus its per-point ground truth in the sensor frame."""

    scan: RawScan
    normals: np.ndarray  # (n, 3) exact surface normals, sensor frame
    is_ground: np.ndarray  # (n,) bool


def beam_directions(
    beams: int = 64,
    azimuth_steps: int = 2048,
    fov_up: float = math.radians(3.0),
    fov_down: float = math.radians(24.9),
) -> np.ndarray:
    """Unit ray directions in the sensor frame, beam-major ordering.

    Elevations sit at the centers of ``beams`` uniform bins spanning
    [-fov_down, fov_up]; azimuths at the centers of ``azimuth_steps`` bins
    spanning the full circle.
    """
    fov = fov_up + fov_down
    elev = fov_up - (np.arange(beams) + 0.5) * (fov / beams)
    azim = np.pi - (np.arange(azimuth_steps) + 0.5) * (2.0 * np.pi / azimuth_steps)
    phi, theta = np.meshgrid(elev, azim, indexing="ij")
    dirs = np.stack(
        [np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)],
        axis=-1,
    )
    return dirs.reshape(-1, 3)


def simulate_scan(
    scene: SceneSpec,
    pose: Pose | None = None,
    beams: int = 64,
    azimuth_steps: int = 2048,
    max_range: float = 120.0,
    fov_up: float = math.radians(3.0),
    fov_down: float = math.radians(24.9),
    rng: np.random.Generator | None = None,
    frame_index: int = 0,
    timestamp: float = 0.0,
) -> SimulatedScan:
    """Ray-cast one sweep from ``pose`` (sensor-to-world); points come back
    in the sensor frame with exact truth. Rays that hit nothing are omitted."""
    if not scene.primitives:
        raise ValueError("scene has no primitives")
    pose = pose or Pose.identity()
    dirs_sensor = beam_directions(beams, azimuth_steps, fov_up, fov_down)
    dirs_world = dirs_sensor @ pose.rotation.T
    origin = pose.translation

    n_rays = dirs_world.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_n = np.zeros((n_rays, 3))
    best_ground = np.zeros(n_rays, dtype=bool)
    for prim in scene.primitives:
        t, normals = prim.intersect(origin, dirs_world)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_n[closer] = normals[closer]
        best_ground[closer] = prim.is_ground

    hit = np.isfinite(best_t) & (best_t <= max_range)
    t_hit = best_t[hit]
    if scene.noise > 0.0:
        rng = rng or np.random.default_rng(0)
        t_hit = t_hit + rng.normal(0.0, scene.noise, t_hit.shape[0])
    points = dirs_sensor[hit] * t_hit[:, None]
    normals = best_n[hit] @ pose.rotation  # world -> sensor: R.T @ n per row
    # orient truth normals toward the sensor like the estimated ones
    flip = np.einsum("ij,ij->i", normals, points) > 0.0
    normals[flip] = -normals[flip]
    scan = RawScan(
        points=points,
        reflectance=np.zeros(points.shape[0]),
        frame_index=frame_index,
        timestamp=timestamp,
    )
    return SimulatedScan(scan=scan, normals=normals, is_ground=best_ground[hit])


def simulate_trajectory(scene: SceneSpec, poses, seed: int = 0, **kwargs) -> list[SimulatedScan]:
    """One sweep per pose; timestamps follow the 10 Hz convention (k * 0.1 s)."""
    rng = np.random.default_rng(seed)
    out = []
    for k, pose in enumerate(poses):
        out.append(
            simulate_scan(
                scene, pose, rng=rng, frame_index=k, timestamp=0.1 * k, **kwargs
            )
        )
    return out


def ground_scene(height: float = 1.73, noise: float = 0.0) -> SceneSpec:
    """Flat ground plane at z = -height, nothing else."""
    return SceneSpec([Plane([0.0, 0.0, 1.0], -height, is_ground=True)], noise=noise)


def corridor_scene(height: float = 1.73, noise: float = 0.0) -> SceneSpec:
    """Ground plus two building rows with setbacks around a straight corridor.

    The staggered boxes expose wall faces perpendicular to the travel
    direction, so all six degrees of freedom are observable.
    """
    top = 4.0
    footprints = [
        # (x_lo, x_hi, y_lo, y_hi) building footprints, travel along +x
        (-20.0, 12.0, 10.0, 13.0),
        (14.0, 36.0, 11.5, 14.5),
        (38.0, 70.0, 10.0, 13.0),
        (-20.0, 6.0, -13.0, -10.0),
        (8.0, 26.0, -14.5, -11.5),
        (28.0, 70.0, -13.0, -10.0),
    ]
    prims = [Plane([0.0, 0.0, 1.0], -height, is_ground=True)]
    for x_lo, x_hi, y_lo, y_hi in footprints:
        prims.append(Box([x_lo, y_lo, -height], [x_hi, y_hi, top]))
    return SceneSpec(prims, noise=noise)


def pillar_scene(height: float = 1.73, noise: float = 0.0) -> SceneSpec:
    """Flat ground with a few tall thin pillars (sparse obstacles)."""
    prims = [Plane([0.0, 0.0, 1.0], -height, is_ground=True)]
    for cx, cy in [(12.0, 5.0), (-15.0, -8.0), (20.0, -14.0), (-9.0, 16.0)]:
        prims.append(
            Box(
                [cx - 0.4, cy - 0.4, -height],
                [cx + 0.4, cy + 0.4, 3.0],
            )
        )
    return SceneSpec(prims, noise=noise)


def load_scene(path) -> SceneSpec:
    """Scene from key=value lines.

    Recognized keys: ``noise``, ``plane.<i>=nx,ny,nz,offset[,ground]``,
    ``box.<i>=xmin,ymin,zmin,xmax,ymax,zmax[,ground]``,
    ``cylinder.<i>=cx,cy,radius[,zmin,zmax][,ground]``.
    """
    noise = 0.0
    prims: list = []
    for ln, line in enumerate(Path(path).read_text().splitlines()):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{ln + 1}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        parts = [p.strip() for p in value.split(",")]
        ground = parts[-1].lower() == "ground"
        if ground:
            parts = parts[:-1]
        nums = [float(p) for p in parts]
        if key == "noise":
            noise = nums[0]
        elif key.startswith("plane."):
            prims.append(Plane(nums[:3], nums[3], is_ground=ground))
        elif key.startswith("box."):
            prims.append(Box(nums[:3], nums[3:6], is_ground=ground))
        elif key.startswith("cylinder."):
            if len(nums) == 3:
                prims.append(Cylinder(nums[0], nums[1], nums[2], is_ground=ground))
            else:
                prims.append(
                    Cylinder(nums[0], nums[1], nums[2], nums[3], nums[4], is_ground=ground)
                )
        else:
            raise ValueError(f"{path}:{ln + 1}: unknown scene key {key!r}")
    return SceneSpec(prims, noise=noise)
