"""Frame-to-model map held as three aligned 2D images.

The map of the recent past lives in the previous sensor frame as three
images: a panoramic vertex map of non-ground structure, a normal map
aligned with it, and a top-down vertex grid of ground structure.  Every
entry carries the timestamp of the sweep that created it.  After each
alignment the map is aged out, re-expressed in the new sensor frame, and
fused with the new sweep, keeping the sensor-nearest surface per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lidom._kernels import (
    bev_pixels,
    min_by_cell,
    min_by_cell_compact,
    spherical_pixels,
)
from lidom.geometry import Pose
from lidom.normals import NormalMap, WindowLimits
from lidom.projection import BevConfig, BevMap, RangeImage, SphericalConfig


@dataclass
class ModelState:
    """Local map images plus per-entry birth timestamps.

    ``vertex_map`` and ``normal_map`` share pixel geometry; a pixel of
    ``normal_map`` can only be valid where ``vertex_map`` holds a vertex.
    ``ground_map`` carries vertices and timestamps but no normals; ground
    plane normals are fitted on demand during association.
    """

    vertex_map: RangeImage
    normal_map: NormalMap
    ground_map: BevMap

    @classmethod
    def empty(
        cls,
        spherical: SphericalConfig | None = None,
        bev: BevConfig | None = None,
        window: WindowLimits | None = None,
    ) -> "ModelState":
        spherical = spherical or SphericalConfig()
        bev = bev or BevConfig()
        window = window or WindowLimits()
        h, w = spherical.height, spherical.width
        return cls(
            vertex_map=RangeImage.empty(spherical),
            normal_map=NormalMap(
                normals=np.zeros((h, w, 3)),
                curvature=np.full((h, w), -1.0),
                valid=np.zeros((h, w), dtype=bool),
                config=window,
            ),
            ground_map=BevMap.empty(bev),
        )


def model_size(state: ModelState) -> tuple[int, int, int]:
    """(vertex-map entries, valid normals, ground-grid entries)."""
    return (
        int(np.count_nonzero(state.vertex_map.valid)),
        int(np.count_nonzero(state.normal_map.valid)),
        int(state.ground_map.cells.size),
    )


def _fresh(timestamps: np.ndarray, now: float, window: float) -> np.ndarray:
    """Age mask: entries strictly older than ``window`` seconds are out."""
    return (now - timestamps) <= window


def update_model(
    state: ModelState,
    scan_img: RangeImage,
    scan_normals: NormalMap,
    scan_bev: BevMap,
    pose: Pose,
    timestamp: float,
    window: float = 10.0,
) -> ModelState:
    """Age out, re-express, and fuse the model with a newly aligned sweep.

    ``scan_img`` is the sweep's range image with ground pixels already
    masked out (ground structure arrives through ``scan_bev`` instead), and
    ``scan_normals`` its normal map.  ``pose`` maps current-sweep
    coordinates into the model frame, so surviving model entries move by
    its inverse and the returned state lives in the current sensor frame.

    Entries strictly older than ``window`` seconds are dropped before the
    transform.  When a scan point and a model point land in the same pixel
    the sensor-nearer one wins; exact range ties go to the scan, so a
    revisited surface refreshes its timestamp.  Scan-born entries are
    stamped with ``timestamp``.
    """
    sph = state.vertex_map.config
    bev = state.ground_map.config
    if scan_img.config != sph:
        raise ValueError("scan range image geometry does not match the model")
    if scan_bev.config != bev:
        raise ValueError("scan ground grid geometry does not match the model")
    inv = pose.inverse()

    # --- panoramic side: scan soup + aged, re-expressed model soup --------
    # Gather through packed flat indices: one mask scan each, then O(valid)
    # work instead of repeated full-image passes.
    h, w = sph.height, sph.width
    sidx = np.flatnonzero(scan_img.valid.reshape(-1))
    midx = np.flatnonzero(state.vertex_map.valid.reshape(-1))
    m_ts = state.vertex_map.timestamps.reshape(-1).take(midx)
    alive = _fresh(m_ts, timestamp, window)
    midx = midx[alive]
    m_ts = m_ts[alive]
    s_pts = scan_img.vertices.reshape(-1, 3).take(sidx, axis=0)
    m_pts = inv.transform(
        state.vertex_map.vertices.reshape(-1, 3).take(midx, axis=0)
    ).reshape(-1, 3)
    pts = np.ascontiguousarray(np.concatenate([s_pts, m_pts]))
    ts = np.concatenate([np.full(s_pts.shape[0], float(timestamp)), m_ts])
    normals = np.concatenate(
        [
            scan_normals.normals.reshape(-1, 3).take(sidx, axis=0),
            state.normal_map.normals.reshape(-1, 3).take(midx, axis=0)
            @ inv.rotation.T,
        ]
    )
    normal_ok = np.concatenate(
        [
            scan_normals.valid.reshape(-1).take(sidx),
            state.normal_map.valid.reshape(-1).take(midx),
        ]
    )
    curvature = np.concatenate(
        [
            scan_normals.curvature.reshape(-1).take(sidx),
            state.normal_map.curvature.reshape(-1).take(midx),
        ]
    )
    source = np.zeros(pts.shape[0], np.uint8)
    source[s_pts.shape[0] :] = 1

    out = ModelState.empty(sph, bev, scan_normals.config)
    if pts.shape[0]:
        u, v, r = spherical_pixels(pts, sph.width, sph.height, sph.fov_up, sph.fov)
        keep = (r >= sph.min_range) & (v >= 0) & (v < sph.height)
        idx = np.flatnonzero(keep)
        if idx.size:
            cells = v[idx] * sph.width + u[idx]
            sub = pts[idx]
            win = min_by_cell(
                cells, r[idx], source[idx], sub[:, 0], sub[:, 1], sub[:, 2], h * w
            )
            occupied = np.flatnonzero(win >= 0)
            winners = idx[win[occupied]]
            n = h * w
            out.vertex_map.vertices.reshape(n, 3)[occupied] = pts[winners]
            out.vertex_map.ranges.reshape(n)[occupied] = r[winners]
            out.vertex_map.timestamps.reshape(n)[occupied] = ts[winners]
            out.normal_map.normals.reshape(n, 3)[occupied] = normals[winners]
            out.normal_map.valid.reshape(n)[occupied] = normal_ok[winners]
            out.normal_map.curvature.reshape(n)[occupied] = curvature[winners]

    # --- top-down side: same recipe without normals -----------------------
    # Both grids are packed, so the gathers are direct array reads.
    h_ts = state.ground_map.timestamps
    galive = _fresh(h_ts, timestamp, window)
    h_ts = h_ts[galive]
    g_pts = scan_bev.vertices
    h_pts = inv.transform(state.ground_map.vertices[galive]).reshape(-1, 3)
    gpts = np.ascontiguousarray(np.concatenate([g_pts, h_pts]))
    gts = np.concatenate([np.full(g_pts.shape[0], float(timestamp)), h_ts])
    gsource = np.zeros(gpts.shape[0], np.uint8)
    gsource[g_pts.shape[0] :] = 1

    if gpts.shape[0]:
        u, v, d, inside = bev_pixels(
            gpts, bev.half_extent_x, bev.half_extent_y, bev.cell_size_x, bev.cell_size_y
        )
        keep = inside & (d >= bev.min_range)
        idx = np.flatnonzero(keep)
        if idx.size:
            cells = v[idx] * bev.cols + u[idx]
            sub = gpts[idx]
            occ, win = min_by_cell_compact(
                cells, d[idx], gsource[idx], sub[:, 0], sub[:, 1], sub[:, 2]
            )
            winners = idx[win]
            out.ground_map = BevMap(
                cells=occ,
                vertices=gpts[winners],
                timestamps=gts[winners],
                indices=np.full(occ.size, -1, np.int64),
                config=bev,
            )
    return out


def dump_model_xyz(state: ModelState, path) -> None:
    """Write every model vertex as an ASCII ``x y z`` row.

    Panoramic entries come first, then ground-grid entries, each in
    row-major image order, so a dump is reproducible byte for byte.
    """
    rows = np.concatenate(
        [
            state.vertex_map.vertices[state.vertex_map.valid].reshape(-1, 3),
            state.ground_map.vertices.reshape(-1, 3),
        ]
    )
    with open(path, "w") as fh:
        np.savetxt(fh, rows, fmt="%.12g")
