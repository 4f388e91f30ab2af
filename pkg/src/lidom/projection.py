"""Spherical range image and bird's-eye-view projections.

A scan is flattened two ways: non-ground geometry into a panoramic range
image indexed by azimuth and elevation, and ground geometry into a metric
top-down grid.  Both builders resolve multi-point pixel conflicts by
keeping the sensor-nearest return, with a full lexicographic tie-break so
the output never depends on input order.

Conventions: image arrays are indexed ``[v, u]`` (row = elevation bin,
column = azimuth bin).  Azimuth ``theta = atan2(y, x)`` increases to the
left, so ``u = 0`` is the rear of the sweep and ``u = width/2`` is
straight ahead.  Row 0 is the highest elevation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from lidom._kernels import (
    bev_pixels,
    min_by_cell,
    min_by_cell_compact,
    spherical_pixels,
)


@dataclass
class SphericalConfig:
    """Geometry of the panoramic range image."""

    width: int = 2048
    height: int = 80
    fov_up: float = math.radians(3.0)
    fov_down: float = math.radians(24.9)
    min_range: float = 1.5  # ego-vehicle returns closer than this are dropped

    @property
    def fov(self) -> float:
        return self.fov_up + self.fov_down


@dataclass
class BevConfig:
    """Geometry of the top-down ground grid (scope is the half-extent)."""

    half_extent_x: float = 120.0
    half_extent_y: float = 60.0
    cell_size_x: float = 0.1
    cell_size_y: float = 0.1
    min_range: float = 1.5

    @property
    def cols(self) -> int:
        return int(math.ceil(2.0 * self.half_extent_x / self.cell_size_x))

    @property
    def rows(self) -> int:
        return int(math.ceil(2.0 * self.half_extent_y / self.cell_size_y))


def cartesian_to_spherical(p) -> tuple[float, float, float]:
    """(range, azimuth, elevation) of a point; azimuth in (-pi, pi]."""
    x, y, z = (float(c) for c in p)
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        raise ValueError("degenerate point at sensor origin has no direction")
    return r, math.atan2(y, x), math.asin(max(-1.0, min(1.0, z / r)))


def project_spherical(p, cfg: SphericalConfig) -> tuple[int, int] | None:
    """Integer pixel of a point, or None when the elevation is out of view.

    Delegates to the batch kernel so scalar and batched projections are
    bit-consistent at pixel boundaries.
    """
    pt = np.asarray(p, dtype=float).reshape(1, 3)
    u, v, r = spherical_pixels(pt, cfg.width, cfg.height, cfg.fov_up, cfg.fov)
    if r[0] == 0.0:
        raise ValueError("degenerate point at sensor origin has no direction")
    if not 0 <= v[0] < cfg.height:
        return None
    return int(u[0]), int(v[0])


def project_bev(p, cfg: BevConfig) -> tuple[int, int] | None:
    """Integer cell of a point, or None when outside the mapped scope."""
    pt = np.asarray(p, dtype=float).reshape(1, 3)
    u, v, _, inside = bev_pixels(
        pt, cfg.half_extent_x, cfg.half_extent_y, cfg.cell_size_x, cfg.cell_size_y
    )
    if not inside[0]:
        return None
    return int(u[0]), int(v[0])


@dataclass
class RangeImage:
    """Panoramic vertex map: one sensor-frame point per (elevation, azimuth) pixel.

    Invalid pixels carry the sentinel range -1.  ``indices`` records which
    input point won each pixel (-1 where invalid), which downstream code
    uses to carry per-point labels onto the image grid.
    """

    vertices: np.ndarray  # (h, w, 3)
    ranges: np.ndarray  # (h, w), -1 where invalid
    timestamps: np.ndarray  # (h, w)
    indices: np.ndarray  # (h, w) int64, -1 where invalid
    config: SphericalConfig = field(default_factory=SphericalConfig)

    @classmethod
    def empty(cls, cfg: SphericalConfig) -> "RangeImage":
        h, w = cfg.height, cfg.width
        return cls(
            vertices=np.zeros((h, w, 3)),
            ranges=np.full((h, w), -1.0),
            timestamps=np.zeros((h, w)),
            indices=np.full((h, w), -1, np.int64),
            config=cfg,
        )

    @property
    def valid(self) -> np.ndarray:
        return self.ranges > 0.0

    def masked(self, keep: np.ndarray) -> "RangeImage":
        """Copy with validity restricted to ``keep`` (arrays are shared)."""
        ranges = np.where(keep, self.ranges, -1.0)
        indices = np.where(keep, self.indices, -1)
        return RangeImage(self.vertices, ranges, self.timestamps, indices, self.config)


@dataclass
class BevMap:
    """Top-down vertex grid over the mapped scope; one point per cell.

    The grid is wide and sparsely occupied, so storage is packed: entry
    ``i`` describes the occupied cell with flat index ``cells[i]``, and
    ``cells`` is sorted ascending.  All per-entry work then scales with the
    occupancy count rather than the grid area.
    """

    cells: np.ndarray  # (k,) int64, sorted flat indices of occupied cells
    vertices: np.ndarray  # (k, 3)
    timestamps: np.ndarray  # (k,)
    indices: np.ndarray  # (k,) int64, input point that won each cell
    config: BevConfig = field(default_factory=BevConfig)

    @classmethod
    def empty(cls, cfg: BevConfig) -> "BevMap":
        return cls(
            cells=np.empty(0, np.int64),
            vertices=np.empty((0, 3)),
            timestamps=np.empty(0),
            indices=np.empty(0, np.int64),
            config=cfg,
        )

    def occupied_cells(self) -> np.ndarray:
        """Sorted flat indices of occupied cells."""
        return self.cells


def _as_timestamp_array(timestamps, n: int) -> np.ndarray:
    ts = np.asarray(timestamps, dtype=float)
    if ts.ndim == 0:
        return np.full(n, float(ts))
    if ts.shape[0] != n:
        raise ValueError("timestamp array length does not match point count")
    return ts


def build_range_image(
    points: np.ndarray, cfg: SphericalConfig, timestamps=0.0
) -> RangeImage:
    """Project a scan into a range image, nearest return per pixel.

    ``timestamps`` may be a scalar (whole-sweep time) or a per-point array.
    Points closer than ``cfg.min_range`` or outside the vertical field of
    view are dropped.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    img = RangeImage.empty(cfg)
    if pts.shape[0] == 0:
        return img
    ts = _as_timestamp_array(timestamps, pts.shape[0])

    u, v, r = spherical_pixels(pts, cfg.width, cfg.height, cfg.fov_up, cfg.fov)
    keep = (r >= cfg.min_range) & (v >= 0) & (v < cfg.height)
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return img
    cells = v[idx] * cfg.width + u[idx]
    sub = pts[idx]
    src = np.zeros(idx.size, np.uint8)
    win = min_by_cell(cells, r[idx], src, sub[:, 0], sub[:, 1], sub[:, 2],
                      cfg.height * cfg.width)
    occupied = np.flatnonzero(win >= 0)
    winners = idx[win[occupied]]

    h, w = cfg.height, cfg.width
    img.vertices.reshape(h * w, 3)[occupied] = pts[winners]
    img.ranges.reshape(h * w)[occupied] = r[winners]
    img.timestamps.reshape(h * w)[occupied] = ts[winners]
    img.indices.reshape(h * w)[occupied] = winners
    return img


def build_bev_map(points: np.ndarray, cfg: BevConfig, timestamps=0.0) -> BevMap:
    """Project points into the top-down grid, sensor-nearest point per cell."""
    pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    if pts.shape[0] == 0:
        return BevMap.empty(cfg)
    ts = _as_timestamp_array(timestamps, pts.shape[0])

    u, v, d, inside = bev_pixels(
        pts, cfg.half_extent_x, cfg.half_extent_y, cfg.cell_size_x, cfg.cell_size_y
    )
    keep = inside & (d >= cfg.min_range)
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return BevMap.empty(cfg)
    cells = v[idx] * cfg.cols + u[idx]
    sub = pts[idx]
    src = np.zeros(idx.size, np.uint8)
    occ, win = min_by_cell_compact(
        cells, d[idx], src, sub[:, 0], sub[:, 1], sub[:, 2]
    )
    winners = idx[win]
    return BevMap(
        cells=occ,
        vertices=pts[winners],
        timestamps=ts[winners],
        indices=winners,
        config=cfg,
    )
