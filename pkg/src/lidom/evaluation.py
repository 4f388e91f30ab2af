"""Relative trajectory error metrics and their text reports.

Errors are measured on trajectory segments of fixed ground-truth arc
length: for a segment from frame i to frame j the residual transform
``(gt_i^-1 gt_j)^-1 (est_i^-1 est_j)`` is reduced to a translation
percentage and a rotation rate, then averaged over every start frame
and every segment length.  Both quantities are invariant to a rigid
transform applied to the two trajectories jointly, so they measure
drift, not choice of origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, pose_delta

SEGMENT_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


@dataclass
class RelErrors:
    """Averaged segment errors plus the per-length breakdown.

    ``t_rel`` is in percent of segment length; ``r_rel`` in degrees per
    100 m.  ``counts[k]`` segments contributed to length ``lengths[k]``;
    rows with no valid segment hold NaN in the breakdown and weigh
    nothing in the averages.  ``segments == 0`` flags a trajectory too
    short for the shortest length.
    """

    t_rel: float
    r_rel: float
    lengths: np.ndarray
    t_by_length: np.ndarray
    r_by_length: np.ndarray
    counts: np.ndarray

    @property
    def segments(self) -> int:
        return int(self.counts.sum())


def arc_lengths(trajectory: list[Pose]) -> np.ndarray:
    """Cumulative travelled distance per frame, starting at 0."""
    t = np.array([p.translation for p in trajectory])
    steps = np.linalg.norm(np.diff(t, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def evaluate(
    est: list[Pose],
    gt: list[Pose],
    lengths: tuple[float, ...] = SEGMENT_LENGTHS,
    stride: int = 1,
) -> RelErrors:
    """Segment-relative errors of ``est`` against ``gt``.

    For every start frame (stepping by ``stride``) and every segment
    length the end frame is the first one at least that far along the
    ground-truth arc.  Translation error is normalised by the nominal
    segment length, rotation error additionally scaled to degrees per
    100 m.  A trajectory whose arc never reaches the shortest length
    yields zero errors with an empty breakdown.

    The result is invariant to one rigid transform applied to both
    trajectories, with one caveat: when a segment length ties exactly
    with a frame's arc distance, rounding introduced by the transform
    can move that segment's end frame by one.
    """
    if len(est) != len(gt):
        raise ValueError(
            f"trajectory lengths differ: {len(est)} vs {len(gt)}"
        )
    if len(gt) < 2:
        raise ValueError("need at least two poses")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    arcs = arc_lengths(gt)
    lengths_arr = np.asarray(lengths, dtype=float)
    if lengths_arr.size == 0 or np.any(np.diff(lengths_arr) <= 0.0):
        raise ValueError("lengths must be strictly increasing and non-empty")
    t_sums = np.zeros(lengths_arr.size)
    r_sums = np.zeros(lengths_arr.size)
    counts = np.zeros(lengths_arr.size, dtype=np.int64)
    for i in range(0, len(gt) - 1, stride):
        for k, seg in enumerate(lengths_arr):
            j = int(np.searchsorted(arcs, arcs[i] + seg, side="left"))
            if j >= len(gt):
                break  # longer segments cannot fit either
            gt_rel = gt[i].inverse() @ gt[j]
            est_rel = est[i].inverse() @ est[j]
            t_err, r_err = pose_delta(gt_rel, est_rel)
            t_sums[k] += t_err / seg * 100.0
            r_sums[k] += np.degrees(r_err) / seg * 100.0
            counts[k] += 1
    evaluated = counts > 0
    t_by = np.where(evaluated, t_sums / np.maximum(counts, 1), np.nan)
    r_by = np.where(evaluated, r_sums / np.maximum(counts, 1), np.nan)
    total = counts.sum()
    t_rel = float(t_sums.sum() / total) if total else 0.0
    r_rel = float(r_sums.sum() / total) if total else 0.0
    return RelErrors(
        t_rel=t_rel,
        r_rel=r_rel,
        lengths=lengths_arr,
        t_by_length=t_by,
        r_by_length=r_by,
        counts=counts,
    )


def report_lines(errors: RelErrors) -> list[str]:
    """Machine-readable ``key=value`` lines, one quantity per line."""
    lines = [
        f"t_rel={errors.t_rel:.6f}",
        f"r_rel={errors.r_rel:.6f}",
        f"segments={errors.segments}",
    ]
    for seg, t, r, c in zip(
        errors.lengths, errors.t_by_length, errors.r_by_length, errors.counts
    ):
        tag = f"length_{int(seg)}"
        lines.append(f"{tag}.t_rel={t:.6f}")
        lines.append(f"{tag}.r_rel={r:.6f}")
        lines.append(f"{tag}.count={int(c)}")
    return lines


def format_report(errors: RelErrors) -> str:
    """Human-readable summary table of the same numbers."""
    if errors.segments == 0:
        return "trajectory shorter than the smallest segment length; no errors computed"
    out = [
        f"translation error : {errors.t_rel:8.4f} %",
        f"rotation error    : {errors.r_rel:8.4f} deg / 100 m",
        f"segments evaluated: {errors.segments}",
        "",
        "length    t_rel [%]   r_rel [deg/100m]   segments",
    ]
    for seg, t, r, c in zip(
        errors.lengths, errors.t_by_length, errors.r_by_length, errors.counts
    ):
        if c == 0:
            out.append(f"{seg:6.0f}          --                 --          0")
        else:
            out.append(f"{seg:6.0f}    {t:9.4f}          {r:9.4f}   {int(c):8d}")
    return "\n".join(out)
