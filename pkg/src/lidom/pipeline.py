"""Per-sweep odometry driver: projection, features, alignment, map upkeep.

Each incoming sweep runs through the fixed stage order -- spherical
projection, ground segmentation plus normal estimation, iterative
alignment against the model, model update -- and extends the estimated
trajectory by one pose.  The model is either the fused local map
(frame-to-model) or just the previous sweep's maps (frame-to-frame).
Stage wall times are collected per frame so a run can report the same
breakdown used in the timing tables.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .geometry import Pose
from .ground import segment_ground
from .kitti import RawScan
from .model import ModelState, update_model
from .normals import compute_normal_map
from .projection import BevMap, build_bev_map, build_range_image
from .registration import predict_initial, register

log = logging.getLogger(__name__)

STAGE_NAMES = (
    "Spherical Projection",
    "Feature Extraction",
    "ICP Optimization",
    "Model Updating",
    "Total",
)


@dataclass
class FrameResult:
    """Outcome of one processed sweep."""

    index: int
    timestamp: float
    pose: Pose                 # frame-0 from frame-k (running composition)
    increment: Pose            # frame-(k-1) from frame-k
    registration: object | None  # RegistrationResult; None on the first frame
    timings: dict = field(default_factory=dict)  # stage -> milliseconds
    fallback: bool = False     # pose taken from prediction, not alignment


class OdometryPipeline:
    """Stateful sweep-by-sweep pose estimator.

    ``mode`` selects what the alignment target is: ``frame_to_model``
    keeps a fused, time-windowed local map; ``frame_to_frame`` rebuilds
    the target from the previous sweep alone.  The first processed sweep
    anchors the trajectory at the identity.
    """

    def __init__(self, config: PipelineConfig | None = None, mode: str = "frame_to_model"):
        if mode not in ("frame_to_model", "frame_to_frame"):
            raise ValueError(f"unknown mode {mode!r}")
        self.config = config or PipelineConfig()
        self.mode = mode
        self.trajectory: list[Pose] = []
        self.results: list[FrameResult] = []
        self.model: ModelState | None = None
        self._stage_sums = dict.fromkeys(STAGE_NAMES, 0.0)
        self._frames = 0

    # -- per-frame stages ------------------------------------------------

    def _build_maps(self, points: np.ndarray, timestamp: float):
        """Projection and feature stages; returns their wall times too."""
        cfg = self.config
        t0 = time.perf_counter()
        img = build_range_image(points, cfg.spherical, timestamps=timestamp)
        t1 = time.perf_counter()
        if cfg.ground_cost:
            mask = segment_ground(img, cfg.ground)
            normals = compute_normal_map(img, mask, cfg.normals)
            nonground = img.masked(img.valid & ~mask.ground)
            ground_points = img.vertices[mask.ground]
        else:
            # spherical-only ablation: every point stays in the range
            # image and the ground branch is never built
            normals = compute_normal_map(img, None, cfg.normals)
            nonground = img
            ground_points = np.empty((0, 3))
        t2 = time.perf_counter()
        bev = build_bev_map(ground_points, cfg.bev, timestamps=timestamp)
        t3 = time.perf_counter()
        times = {
            "Spherical Projection": 1e3 * ((t1 - t0) + (t3 - t2)),
            "Feature Extraction": 1e3 * (t2 - t1),
        }
        return nonground, normals, bev, times

    def process(self, scan: RawScan) -> FrameResult:
        """Advance the trajectory by one sweep."""
        start = time.perf_counter()
        timestamp = scan.timestamp if scan.timestamp is not None else 0.1 * scan.frame_index
        points = np.asarray(scan.points, dtype=float).reshape(-1, 3)

        nonground, normals, bev, times = self._build_maps(points, timestamp)

        t0 = time.perf_counter()
        first = not self.trajectory
        fallback = False
        if first:
            pose = Pose.identity()
            increment = Pose.identity()
            result = None
        else:
            prediction = predict_initial(self.trajectory)
            result = register(
                nonground, bev, self.model, init=prediction, cfg=self.config.registration
            )
            if result.converged:
                increment = result.pose
            else:
                log.warning(
                    "frame %d: alignment did not converge after %d iterations; "
                    "using motion prediction",
                    scan.frame_index,
                    result.iterations,
                )
                increment = prediction
                fallback = True
            pose = self.trajectory[-1] @ increment
        t1 = time.perf_counter()
        times["ICP Optimization"] = 1e3 * (t1 - t0)

        if self.mode == "frame_to_model" and self.model is not None:
            self.model = update_model(
                self.model, nonground, normals, bev, increment, timestamp,
                window=self.config.model_window,
            )
        else:
            # first frame, or frame-to-frame: the target is this sweep alone
            self.model = update_model(
                ModelState.empty(self.config.spherical, self.config.bev, normals.config),
                nonground, normals, bev, Pose.identity(), timestamp,
                window=self.config.model_window,
            )
        t2 = time.perf_counter()
        times["Model Updating"] = 1e3 * (t2 - t1)
        times["Total"] = 1e3 * (t2 - start)

        self.trajectory.append(pose)
        for name, ms in times.items():
            self._stage_sums[name] += ms
        self._frames += 1
        frame = FrameResult(
            index=scan.frame_index,
            timestamp=timestamp,
            pose=pose,
            increment=increment,
            registration=result,
            timings=times,
            fallback=fallback,
        )
        self.results.append(frame)
        return frame

    # -- reporting -------------------------------------------------------

    def mean_timings(self) -> dict:
        """Mean per-stage milliseconds over all processed frames."""
        if self._frames == 0:
            return dict.fromkeys(STAGE_NAMES, 0.0)
        return {name: self._stage_sums[name] / self._frames for name in STAGE_NAMES}

    def timing_report(self) -> str:
        means = self.mean_timings()
        width = max(len(n) for n in STAGE_NAMES)
        lines = [f"{name:<{width}} : {means[name]:8.2f} ms" for name in STAGE_NAMES]
        return "\n".join(lines)
