"""Ground/non-ground labelling on the spherical range image.

A pixel is labelled ground when its height sits inside a band around the
calibrated ground plane and the local slope along its image column stays
below a small angle in both vertical directions.  The slope test compares
each pixel against the nearest valid pixel above and below in the same
column, looking at most ``neighbor_reach`` rows away so that occlusion
gaps do not link unrelated surfaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import ground_labels
from .projection import RangeImage

# Label codes; kept small so masks can be dumped as graymaps.
INVALID = np.uint8(0)
NON_GROUND = np.uint8(1)
GROUND = np.uint8(2)


@dataclass
class GroundSegConfig:
    """Thresholds for the height band and per-column angle test.

    The candidate band accepts heights ``z`` with
    ``-sensor_height - band_below <= z <= -sensor_height + band_above``,
    i.e. a corridor of width ``band_above + band_below`` around the
    calibrated ground height.
    """

    sensor_height: float = 1.73
    band_above: float = 0.5
    band_below: float = 1.0
    max_angle: float = math.radians(5.0)
    neighbor_reach: int = 5

    def __post_init__(self) -> None:
        for name in ("sensor_height", "band_above", "band_below", "max_angle"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.neighbor_reach < 1:
            raise ValueError("neighbor_reach must be at least 1")


@dataclass
class GroundMask:
    """Per-pixel labels aligned with a range image."""

    labels: np.ndarray  # (h, w) uint8, INVALID / NON_GROUND / GROUND

    @property
    def ground(self) -> np.ndarray:
        return self.labels == GROUND

    @property
    def non_ground(self) -> np.ndarray:
        return self.labels == NON_GROUND

    @property
    def valid(self) -> np.ndarray:
        return self.labels != INVALID


def segment_ground(img: RangeImage, cfg: GroundSegConfig | None = None) -> GroundMask:
    """Label each valid pixel of a range image as ground or non-ground."""
    if cfg is None:
        cfg = GroundSegConfig()
    labels = ground_labels(
        np.ascontiguousarray(img.vertices),
        np.ascontiguousarray(img.ranges),
        -cfg.sensor_height - cfg.band_below,
        -cfg.sensor_height + cfg.band_above,
        cfg.neighbor_reach,
        cfg.max_angle,
    )
    return GroundMask(labels=labels)


def write_mask_pgm(mask: GroundMask, path: str | Path) -> None:
    """Dump a mask as a plain-text graymap (invalid 0, non-ground 128, ground 255)."""
    shade = np.zeros_like(mask.labels, dtype=np.int64)
    shade[mask.labels == NON_GROUND] = 128
    shade[mask.labels == GROUND] = 255
    height, width = shade.shape
    lines = ["P2", f"{width} {height}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in shade)
    Path(path).write_text("\n".join(lines) + "\n")
