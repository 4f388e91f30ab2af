"""Command-line runner: scans in, poses out, reports on request.

Processes a directory of ``.bin`` sweeps in frame-index order through the
odometry pipeline, writes the estimated trajectory as 3x4 pose rows, and
optionally emits a segment-relative error report (when ground truth is
given), a per-stage timing table, and a two-column x/y trajectory table
for plotting.  Identical inputs and configuration produce byte-identical
outputs.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config
from .evaluation import evaluate, format_report
from .kitti import apply_calib_correction, read_poses, read_scan, write_poses
from .pipeline import OdometryPipeline

log = logging.getLogger(__name__)

MODES = ("frame-to-model", "frame-to-frame")


@dataclass
class RunConfig:
    """One odometry run: inputs, outputs, and switches."""

    scans: Path
    out: Path
    mode: str = "frame-to-model"
    gt: Path | None = None
    config: Path | None = None
    timing: bool = False
    plot_data: Path | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def _list_scans(directory: Path) -> list[tuple[int, Path]]:
    """(frame index, path) pairs in strictly increasing index order."""
    files = sorted(directory.glob("*.bin"))
    if not files:
        raise FileNotFoundError(f"no .bin scans in {directory}")
    indexed = []
    for path in files:
        try:
            indexed.append((int(path.stem), path))
        except ValueError:
            raise ValueError(
                f"scan file name is not a frame index: {path.name}"
            ) from None
    indexed.sort(key=lambda pair: pair[0])
    for (prev, _), (cur, path) in zip(indexed, indexed[1:]):
        if cur <= prev:
            raise ValueError(
                f"frame indices are not strictly increasing at {path.name}"
            )
    return indexed


def _load_times(directory: Path, count: int) -> list[float] | None:
    """Per-scan timestamps from times.txt beside or above the scans."""
    for candidate in (directory / "times.txt", directory.parent / "times.txt"):
        if candidate.is_file():
            values = [float(token) for token in candidate.read_text().split()]
            if len(values) < count:
                raise ValueError(
                    f"{candidate}: {len(values)} timestamps for {count} scans"
                )
            return values[:count]
    return None


def dump_plot_data(pose_file) -> np.ndarray:
    """Planar (x, y) positions of every pose in a trajectory file."""
    poses = read_poses(pose_file)
    return np.array(
        [[pose.translation[0], pose.translation[1]] for pose in poses]
    ).reshape(-1, 2)


def _write_plot_table(table: np.ndarray, path) -> None:
    lines = [f"{x:.17g} {y:.17g}" for x, y in table]
    Path(path).write_text(("\n".join(lines) + "\n") if lines else "")


def run(rc: RunConfig) -> int:
    """Execute one odometry run; returns a process exit status."""
    try:
        cfg = load_config(rc.config) if rc.config else PipelineConfig()
        scans = _list_scans(Path(rc.scans))
        times = _load_times(Path(rc.scans), len(scans))
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    pipe = OdometryPipeline(cfg, mode=rc.mode.replace("-", "_"))
    for position, (index, path) in enumerate(scans):
        timestamp = times[position] if times is not None else 0.1 * index
        try:
            scan = read_scan(path, frame_index=index, timestamp=timestamp)
        except (OSError, ValueError) as err:
            print(f"error: frame {index}: unreadable scan {path}: {err}",
                  file=sys.stderr)
            return 1
        if cfg.calib_angle != 0.0:
            scan = apply_calib_correction(scan, cfg.calib_angle)
        pipe.process(scan)

    write_poses(pipe.trajectory, rc.out)

    if rc.gt is not None:
        try:
            gt = read_poses(rc.gt)
        except (OSError, ValueError) as err:
            print(f"error: {err}", file=sys.stderr)
            return 1
        if len(gt) != len(pipe.trajectory):
            print(
                f"error: ground truth has {len(gt)} poses for "
                f"{len(pipe.trajectory)} frames",
                file=sys.stderr,
            )
            return 1
        print(format_report(evaluate(pipe.trajectory, gt)))

    if rc.timing:
        print(pipe.timing_report())

    if rc.plot_data is not None:
        _write_plot_table(dump_plot_data(rc.out), rc.plot_data)

    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lidom",
        description="LiDAR odometry over a directory of .bin sweeps",
    )
    parser.add_argument(
        "--mode", choices=MODES, default="frame-to-model",
        help="alignment target: fused local map, or previous sweep only",
    )
    parser.add_argument(
        "--scans", metavar="DIR", type=Path, required=True,
        help="directory of .bin sweeps named by frame index",
    )
    parser.add_argument(
        "--gt", metavar="FILE", type=Path, default=None,
        help="ground-truth pose file; adds a relative-error report",
    )
    parser.add_argument(
        "--out", metavar="FILE", type=Path, required=True,
        help="output pose file (one 3x4 row-major line per frame)",
    )
    parser.add_argument(
        "--config", metavar="FILE", type=Path, default=None,
        help="key = value settings overriding the built-in defaults",
    )
    parser.add_argument(
        "--timing", action="store_true",
        help="print the mean per-stage millisecond table",
    )
    parser.add_argument(
        "--plot-data", metavar="FILE", type=Path, default=None,
        help="also write the estimated x/y positions as a two-column table",
    )
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    rc = RunConfig(
        scans=args.scans,
        out=args.out,
        mode=args.mode,
        gt=args.gt,
        config=args.config,
        timing=args.timing,
        plot_data=args.plot_data,
    )
    return run(rc)
