"""Surface normals and curvature on the spherical range image.

Each pixel's normal comes from an eigen-decomposition of the covariance of
its neighbourhood, gathered through a range-adaptive window: close returns
span many pixels so the window shrinks in metric terms, far returns span
few so it grows.  Two rejection rules guard the fit — a pixel whose window
straddles a depth discontinuity is dropped when more than half its
neighbours disagree in range, and individual neighbours beyond the range
gate are excluded from the fit.  Curvature (the fraction of variance out
of plane) doubles as a saliency score: flat, well-supported pixels make it
into the map, edges and clutter do not.

``estimate_normal`` is the single-pixel reference implementation; the map
builder runs the same logic through a compiled kernel and is tested to
agree with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .ground import GroundMask
from .projection import RangeImage, SphericalConfig

_METHODS = ("range_adaptive", "cross_product")


@dataclass
class WindowLimits:
    """Window bounds and rejection thresholds for normal estimation.

    ``metric_extent`` is the target physical size of the fitting window;
    the pixel window derived from it is clamped to
    [min_cols, max_cols] x [min_rows, max_rows] (all odd, centered).
    ``range_gate`` rejects window neighbours by range disagreement,
    ``p2p_gate`` is the point-to-plane outlier bound shared with the
    registration stage, and ``curvature_max`` keeps only salient planar
    pixels in the final map.
    """

    max_cols: int = 13
    max_rows: int = 7
    min_cols: int = 5
    min_rows: int = 3
    metric_extent: float = 0.3
    range_gate: float = 0.5
    p2p_gate: float = 0.5
    curvature_max: float = 0.05
    seam_margin_rows: int = 1
    method: str = "range_adaptive"

    def __post_init__(self) -> None:
        for lo, hi in ((self.min_cols, self.max_cols), (self.min_rows, self.max_rows)):
            if not (hi >= lo >= 3):
                raise ValueError("window limits must satisfy max >= min >= 3")
            if lo % 2 == 0 or hi % 2 == 0:
                raise ValueError("window limits must be odd")
        for name in ("metric_extent", "range_gate", "p2p_gate", "curvature_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.seam_margin_rows < 0:
            raise ValueError("seam_margin_rows must be non-negative")
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}")


@dataclass
class PlaneFit:
    """A fitted local plane n . x = offset with curvature sigma.

    ``valid`` is False for degenerate inputs (fewer than 3 points,
    coincident or collinear sets); the other fields are then zero.
    """

    normal: np.ndarray
    offset: float
    curvature: float
    valid: bool


@dataclass
class NormalMap:
    """Per-pixel normals aligned with a range image.

    ``curvature`` is -1 where no plane was fitted; ``valid`` additionally
    applies the curvature gate, so it marks pixels usable for matching.
    """

    normals: np.ndarray  # (h, w, 3)
    curvature: np.ndarray  # (h, w), -1 where not fitted
    valid: np.ndarray  # (h, w) bool
    config: WindowLimits = field(default_factory=WindowLimits)


def adaptive_window(
    r: float, cfg: WindowLimits, sph: SphericalConfig
) -> tuple[int, int]:
    """Odd window dimensions (cols, rows) for a pixel at range ``r``.

    The raw size makes the window span ``metric_extent`` meters at that
    range; it is odd-floored and clamped to the configured limits.
    """
    if r <= 0:
        raise ValueError("range must be positive")
    l_x = _kernels._odd_floor_clamp(
        cfg.metric_extent / (r * np.pi) * sph.width, cfg.min_cols, cfg.max_cols
    )
    l_y = _kernels._odd_floor_clamp(
        cfg.metric_extent / (r * sph.fov) * sph.height, cfg.min_rows, cfg.max_rows
    )
    return int(l_x), int(l_y)


def _lexicographic_sign(n: np.ndarray) -> np.ndarray:
    for c in n:
        if c != 0.0:
            return -n if c < 0.0 else n
    return n


def plane_fit(points) -> PlaneFit:
    """Least-squares plane through a small point set.

    The normal is the least-variance direction of the centered covariance;
    curvature is the out-of-plane fraction of total variance, in
    [0, 1/3].  Degenerate sets (k < 3, coincident, collinear) return an
    invalid fit.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    k = pts.shape[0]
    bad = PlaneFit(np.zeros(3), 0.0, 0.0, False)
    if k < 3:
        return bad
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / k
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending
    lam1, lam2, lam3 = eigvals[2], eigvals[1], eigvals[0]
    if lam1 <= 1e-30 or lam2 <= 1e-9 * lam1:
        return bad
    normal = _lexicographic_sign(eigvecs[:, 0].copy())
    curvature = max(lam3 / (lam1 + lam2 + lam3), 0.0)
    return PlaneFit(normal, float(normal @ mean), float(curvature), True)


def estimate_normal(
    img: RangeImage,
    u: int,
    v: int,
    cfg: WindowLimits | None = None,
    exclude: np.ndarray | None = None,
) -> PlaneFit:
    """Plane fit for one pixel through the adaptive window (reference path).

    Gathers valid pixels in the window (azimuth wraps, elevation clips),
    drops the pixel when more than half of them disagree with the center
    range by more than the gate, fits on the agreeing ones, and orients
    the normal toward the sensor.  ``exclude`` marks pixels (e.g. the
    dilated ground set) to leave out of the gather; it may include the
    center itself, which then only anchors the window without joining
    the fit.
    """
    if cfg is None:
        cfg = WindowLimits()
    height, width = img.ranges.shape
    r_c = img.ranges[v, u]
    if r_c <= 0.0:
        raise ValueError("center pixel is not a valid estimation target")
    l_x, l_y = adaptive_window(r_c, cfg, img.config)
    gathered = 0
    kept: list[np.ndarray] = []
    for dv in range(-(l_y // 2), l_y // 2 + 1):
        row = v + dv
        if not 0 <= row < height:
            continue
        for du in range(-(l_x // 2), l_x // 2 + 1):
            col = (u + du) % width
            if img.ranges[row, col] <= 0.0:
                continue
            if exclude is not None and exclude[row, col]:
                continue
            gathered += 1
            if abs(img.ranges[row, col] - r_c) <= cfg.range_gate:
                kept.append(img.vertices[row, col])
    fails = gathered - len(kept)
    if 2 * fails > gathered:
        return PlaneFit(np.zeros(3), 0.0, 0.0, False)
    fit = plane_fit(kept) if len(kept) >= 3 else None
    if fit is None or not fit.valid:
        return PlaneFit(np.zeros(3), 0.0, 0.0, False)
    if fit.normal @ img.vertices[v, u] > 0.0:
        fit.normal = -fit.normal
        fit.offset = -fit.offset
    return fit


def gather_exclusion(mask: GroundMask, cfg: WindowLimits) -> np.ndarray:
    """Pixels to leave out of neighbour gathering: the ground set dilated
    vertically by ``seam_margin_rows``.

    The dilation keeps wall-base fits clean: floor pixels right at a
    facade seam fail the slope test and end up labelled non-ground, so
    without the margin they would leak into the window of every wall
    pixel above them.
    """
    ground = mask.ground
    skip = ground.copy()
    for d in range(1, cfg.seam_margin_rows + 1):
        skip[d:] |= ground[:-d]
        skip[:-d] |= ground[d:]
    return skip


def compute_normal_map(
    img: RangeImage,
    mask: GroundMask | None = None,
    cfg: WindowLimits | None = None,
) -> NormalMap:
    """Normals for every valid non-ground pixel of a range image.

    The slightly dilated ground set (per ``mask``) is excluded both from
    window gathering and as estimation targets: a seam pixel's own surface
    is ambiguous between floor and facade, so a plane fitted around it
    would not contain its vertex.  Ground normals are instead fitted
    online from the ground map during registration.
    """
    if cfg is None:
        cfg = WindowLimits()
    if mask is not None:
        skip_gather = np.ascontiguousarray(gather_exclusion(mask, cfg))
        skip_center = skip_gather
    else:
        skip_center = np.zeros(img.ranges.shape, dtype=bool)
        skip_gather = skip_center
    vertices = np.ascontiguousarray(img.vertices)
    ranges = np.ascontiguousarray(img.ranges)
    if cfg.method == "cross_product":
        normals, sigma, valid = _kernels.cross_normal_map(
            vertices, ranges, skip_center, skip_gather
        )
    else:
        gatherable = np.ascontiguousarray((ranges > 0.0) & ~skip_gather)
        normals, sigma, valid = _kernels.normal_map(
            vertices,
            ranges,
            skip_center,
            gatherable,
            img.config.fov,
            cfg.min_cols,
            cfg.max_cols,
            cfg.min_rows,
            cfg.max_rows,
            cfg.metric_extent,
            cfg.range_gate,
            cfg.curvature_max,
        )
    return NormalMap(normals=normals, curvature=sigma, valid=valid, config=cfg)


def p2p_outlier(distance, cfg: WindowLimits):
    """Point-to-plane outlier predicate shared with the registration stage."""
    return np.abs(distance) > cfg.p2p_gate
