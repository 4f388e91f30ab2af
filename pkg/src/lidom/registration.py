"""Sweep-to-model alignment with a fused point-to-plane objective.

Non-ground structure matches against the panoramic model image and ground
structure against the top-down grid.  Both produce point-to-plane rows
that share one 6-DoF Gauss-Newton system; the two partial costs are
balanced by an adaptive weight driven by each domain's inlier ratio.  The
pose increment is applied as a left multiplication ``T <- exp(dT) @ T``,
with Levenberg damping escalated whenever a step would raise the cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from lidom._kernels import associate_bev, associate_spherical, normal_equations
from lidom.geometry import Pose, exp_map
from lidom.model import ModelState
from lidom.normals import NormalMap
from lidom.projection import BevMap, RangeImage


@dataclass
class RegistrationConfig:
    """Knobs of the iterative alignment."""

    base_weight: float = 0.7  # prior share of the panoramic cost (w1)
    gate: float = 0.5  # plane-distance acceptance threshold (m)
    patch_half_width: int = 5  # ground-normal search patch, in cells
    ground_neighbors: int = 5  # cells per ground plane fit
    max_iterations: int = 30
    convergence_threshold: float = 1e-5  # stop when |twist| drops below
    damping_floor: float = 1e-6  # lambda for an ill-conditioned system
    damping_limit: float = 1e8  # abandon escalation past this

    def __post_init__(self) -> None:
        if not 0.0 <= self.base_weight <= 1.0:
            raise ValueError("base_weight must lie in [0, 1]")
        if self.gate <= 0.0 or self.convergence_threshold <= 0.0:
            raise ValueError("gate and convergence threshold must be positive")
        if self.patch_half_width < 1 or self.ground_neighbors < 3:
            raise ValueError("ground patch too small to support a plane fit")
        if self.max_iterations < 1:
            raise ValueError("need at least one iteration")
        if self.damping_floor <= 0.0 or self.damping_limit <= self.damping_floor:
            raise ValueError("damping range is empty")


@dataclass
class Correspondences:
    """Packed point-to-plane pairs from one association pass.

    ``source`` holds sweep-frame vertices, ``warped`` the same vertices
    under the pose being evaluated, ``model``/``normal`` the matched model
    vertex and plane normal, and ``residual`` the signed plane distance.
    ``domain`` is 0 for panoramic rows and 1 for ground rows.
    ``attempted`` counts candidates before gating, the denominator of the
    inlier ratio.
    """

    source: np.ndarray
    warped: np.ndarray
    model: np.ndarray
    normal: np.ndarray
    residual: np.ndarray
    domain: np.ndarray
    attempted: int

    def __len__(self) -> int:
        return int(self.residual.shape[0])

    @property
    def inlier_ratio(self) -> float:
        return len(self) / self.attempted if self.attempted else 0.0

    @classmethod
    def merge(cls, a: "Correspondences", b: "Correspondences") -> "Correspondences":
        return cls(
            source=np.concatenate([a.source, b.source]),
            warped=np.concatenate([a.warped, b.warped]),
            model=np.concatenate([a.model, b.model]),
            normal=np.concatenate([a.normal, b.normal]),
            residual=np.concatenate([a.residual, b.residual]),
            domain=np.concatenate([a.domain, b.domain]),
            attempted=a.attempted + b.attempted,
        )


@dataclass
class GroundNormalCache:
    """Memo of ground plane fits, one entry per occupied model cell.

    The model is frozen while one sweep is aligned, so a cell's fitted
    normal can be reused across iterations.  Entries are indexed by the
    cell's row in the packed grid; ``state`` is 0 = unknown, 1 = fitted,
    2 = degenerate.
    """

    normal: np.ndarray
    state: np.ndarray

    @classmethod
    def for_map(cls, grid: BevMap) -> "GroundNormalCache":
        k = grid.cells.size
        return cls(np.zeros((k, 3)), np.zeros(k, np.uint8))


@dataclass
class RegistrationResult:
    """Outcome of one sweep-to-model alignment."""

    pose: Pose
    converged: bool
    iterations: int
    cost: float
    weight: float
    nonground_inliers: int
    ground_inliers: int
    # (cost before step, cost after step) per accepted iteration, both
    # evaluated on that iteration's own correspondence set
    cost_trace: list[tuple[float, float]] = field(default_factory=list)


def _packed_vertices(vertices: np.ndarray, flat_index: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(vertices.reshape(-1, 3).take(flat_index, axis=0))


# Dense cell -> packed-row lookup tables, one per grid shape, reused across
# calls so their pages stay resident.  Only the entries written for the
# previous grid are cleared, keeping the reset proportional to occupancy
# rather than grid area.
_SLOT_GRIDS: dict[tuple[int, int], list] = {}


def _cell_slots(grid: BevMap) -> np.ndarray:
    """Flat int32 table mapping cell index to packed row, -1 where empty."""
    shape = (grid.config.rows, grid.config.cols)
    entry = _SLOT_GRIDS.get(shape)
    if entry is None:
        entry = [np.full(shape[0] * shape[1], -1, np.int32), np.empty(0, np.int64)]
        _SLOT_GRIDS[shape] = entry
    slots, prev = entry
    if prev is grid.cells:  # same frozen grid as the last call
        return slots
    slots[prev] = -1
    slots[grid.cells] = np.arange(grid.cells.size, dtype=np.int32)
    entry[1] = grid.cells
    return slots


def associate_nonground(
    scan_img: RangeImage,
    model_img: RangeImage,
    model_normals: NormalMap,
    pose: Pose,
    gate: float = 0.5,
    source: np.ndarray | None = None,
) -> Correspondences:
    """Pair warped sweep vertices with model pixels they project onto.

    A valid sweep vertex is warped by ``pose``, projected into the model
    image, and matched with the vertex and normal stored at the hit pixel.
    The pair is kept when that pixel holds a valid vertex with a valid
    normal and the plane distance ``n . (q - v)`` is within ``gate``.
    ``source`` short-circuits the vertex extraction when the caller has
    already packed ``scan_img``'s valid vertices (one row each).
    """
    src = source if source is not None else _packed_vertices(
        scan_img.vertices, np.flatnonzero(scan_img.valid.reshape(-1))
    )
    cfg = model_img.config
    warped, model, normal, residual, index, count = associate_spherical(
        src,
        np.ascontiguousarray(pose.rotation),
        np.ascontiguousarray(pose.translation),
        np.ascontiguousarray(model_img.vertices),
        np.ascontiguousarray(model_img.ranges),
        np.ascontiguousarray(model_normals.normals),
        np.ascontiguousarray(model_normals.valid),
        cfg.width,
        cfg.height,
        cfg.fov_up,
        cfg.fov,
        gate,
    )
    return Correspondences(
        source=src[index[:count]],
        warped=warped[:count],
        model=model[:count],
        normal=normal[:count],
        residual=residual[:count],
        domain=np.zeros(count, np.uint8),
        attempted=src.shape[0],
    )


def associate_ground(
    scan_bev: BevMap,
    model_bev: BevMap,
    pose: Pose,
    gate: float = 0.5,
    patch_half_width: int = 5,
    neighbors: int = 5,
    cache: GroundNormalCache | None = None,
    source: np.ndarray | None = None,
) -> Correspondences:
    """Pair warped ground vertices with plane fits on the top-down map.

    A sweep ground vertex is warped, binned into the model grid, and
    matched against the vertex stored at the hit cell.  The plane normal
    there comes from a least-squares fit of the ``neighbors`` occupied
    cells closest in 3D to the hit cell's vertex within a patch of
    half-width ``patch_half_width``; hits whose patch holds fewer occupied
    cells, or whose fit is degenerate, are skipped.  ``source``
    short-circuits the vertex copy as in ``associate_nonground``.
    """
    src = source if source is not None else np.ascontiguousarray(scan_bev.vertices)
    cfg = model_bev.config
    if cache is None:
        cache = GroundNormalCache.for_map(model_bev)
    warped, model, normal, residual, index, count = associate_bev(
        src,
        np.ascontiguousarray(pose.rotation),
        np.ascontiguousarray(pose.translation),
        _cell_slots(model_bev),
        np.ascontiguousarray(model_bev.vertices),
        cfg.rows,
        cfg.cols,
        cfg.half_extent_x,
        cfg.half_extent_y,
        cfg.cell_size_x,
        cfg.cell_size_y,
        patch_half_width,
        neighbors,
        gate,
        cache.normal,
        cache.state,
    )
    return Correspondences(
        source=src[index[:count]],
        warped=warped[:count],
        model=model[:count],
        normal=normal[:count],
        residual=residual[:count],
        domain=np.ones(count, np.uint8),
        attempted=src.shape[0],
    )


def adaptive_weight(
    nonground_inliers: int,
    nonground_total: int,
    ground_inliers: int,
    ground_total: int,
    base_weight: float = 0.7,
) -> float:
    """Blend factor for the panoramic cost based on relative inlier health.

    Each domain gets an inlier ratio (0 when it attempted nothing).  The
    panoramic share is ``rho_s / (rho_s + rho_g)``, falling back to 1/2
    when both ratios vanish, and the final weight is ``base_weight`` times
    that share, clamped to [0, 1].  A starved ground domain thus pushes
    the weight up to ``base_weight``; a starved panoramic domain to 0.
    """
    rho_s = nonground_inliers / nonground_total if nonground_total else 0.0
    rho_g = ground_inliers / ground_total if ground_total else 0.0
    share = 0.5 if rho_s + rho_g == 0.0 else rho_s / (rho_s + rho_g)
    return float(min(max(base_weight * share, 0.0), 1.0))


def gauss_newton_step(
    corrs: Correspondences,
    weight: float,
    damping: float = 0.0,
    damping_floor: float = 1e-6,
) -> tuple[np.ndarray, bool]:
    """One damped point-to-plane update; returns ``(twist, ok)``.

    Rows are ``J = [n | q x n]`` with residual ``e = n . (q - v)``; each
    row's contribution is scaled once by its domain weight on both sides
    of the system, so rescaling all weights by a common factor leaves the
    solution of ``(H + lambda I) dT = -b`` unchanged when ``lambda`` is 0.
    ``lambda`` is ``damping`` when positive, otherwise 0 for a
    well-conditioned system and ``damping_floor`` for a near-singular one.
    A system that is still singular yields a zero twist with ``ok`` False.
    """
    h, b, _ = normal_equations(
        corrs.warped, corrs.normal, corrs.residual, corrs.domain, weight
    )
    lam = damping
    if lam <= 0.0:
        ev = np.linalg.eigvalsh(h)
        well = ev[-1] > 0.0 and ev[0] > 1e-8 * ev[-1]
        lam = 0.0 if well else damping_floor
    try:
        twist = np.linalg.solve(h + lam * np.eye(6), -b)
    except np.linalg.LinAlgError:
        return np.zeros(6), False
    if not np.all(np.isfinite(twist)):
        return np.zeros(6), False
    return twist, True


def predict_initial(history: Sequence[Pose]) -> Pose:
    """Constant-acceleration extrapolation of the next pose increment.

    ``history`` holds the trajectory so far, oldest first.  With fewer
    than two poses the prediction is the identity; with exactly two it is
    the last increment; otherwise the last two increments ``d1, d0``
    extrapolate to ``d1 (d0^-1 d1)``, which is exact when the increment
    twist changes at a constant rate.
    """
    if len(history) < 2:
        return Pose.identity()
    d1 = history[-2].inverse() @ history[-1]
    if len(history) == 2:
        return d1
    d0 = history[-3].inverse() @ history[-2]
    return d1 @ (d0.inverse() @ d1)


def _weighted_cost(corrs: Correspondences, pose: Pose, cost_weights: np.ndarray) -> float:
    """Quadratic objective at ``pose`` over a fixed correspondence set."""
    q = corrs.source @ pose.rotation.T + pose.translation
    e = np.einsum("ij,ij->i", corrs.normal, q - corrs.model)
    return float(np.sum(cost_weights * e * e))


def register(
    scan_img: RangeImage,
    scan_bev: BevMap,
    model: ModelState,
    init: Pose | None = None,
    cfg: RegistrationConfig | None = None,
) -> RegistrationResult:
    """Align one sweep against the model, starting from ``init``.

    ``scan_img`` must already have ground pixels masked out; ground
    structure arrives through ``scan_bev``.  Correspondences are rebuilt
    every iteration at the current pose estimate.  A step that would raise
    the weighted cost on its own correspondence set is rolled back and
    retried with tenfold damping; alignment stops when an accepted step's
    twist norm falls below the threshold.  With no correspondences at all
    the initial pose is returned unconverged.
    """
    cfg = cfg or RegistrationConfig()
    pose = Pose(init.rotation.copy(), init.translation.copy()) if init else Pose.identity()
    cache = GroundNormalCache.for_map(model.ground_map)
    src_img = _packed_vertices(
        scan_img.vertices, np.flatnonzero(scan_img.valid.reshape(-1))
    )
    src_bev = np.ascontiguousarray(scan_bev.vertices)
    converged = False
    iterations = 0
    cost = 0.0
    weight = cfg.base_weight
    n_inliers = 0
    g_inliers = 0
    trace: list[tuple[float, float]] = []

    for _ in range(cfg.max_iterations):
        iterations += 1
        cs = associate_nonground(
            scan_img, model.vertex_map, model.normal_map, pose, cfg.gate,
            source=src_img,
        )
        cg = associate_ground(
            scan_bev,
            model.ground_map,
            pose,
            cfg.gate,
            cfg.patch_half_width,
            cfg.ground_neighbors,
            cache,
            source=src_bev,
        )
        n_inliers, g_inliers = len(cs), len(cg)
        corrs = Correspondences.merge(cs, cg)
        if len(corrs) == 0:
            break
        weight = adaptive_weight(
            n_inliers, cs.attempted, g_inliers, cg.attempted, cfg.base_weight
        )
        cost_weights = np.where(corrs.domain == 0, weight, 1.0 - weight)
        cost = _weighted_cost(corrs, pose, cost_weights)

        lam = 0.0
        accepted = False
        solvable = True
        while True:
            twist, ok = gauss_newton_step(corrs, weight, lam, cfg.damping_floor)
            if not ok:
                solvable = False
                break
            candidate = exp_map(twist) @ pose
            new_cost = _weighted_cost(corrs, candidate, cost_weights)
            if new_cost <= cost + 1e-12 * max(1.0, cost):
                accepted = True
                break
            lam = cfg.damping_floor if lam == 0.0 else lam * 10.0
            if lam > cfg.damping_limit:
                break
        if not solvable or not accepted:
            break
        trace.append((cost, new_cost))
        pose = candidate
        cost = new_cost
        if float(np.linalg.norm(twist)) < cfg.convergence_threshold:
            converged = True
            break

    return RegistrationResult(
        pose=pose.orthonormalized(),
        converged=converged,
        iterations=iterations,
        cost=cost,
        weight=weight,
        nonground_inliers=n_inliers,
        ground_inliers=g_inliers,
        cost_trace=trace,
    )
