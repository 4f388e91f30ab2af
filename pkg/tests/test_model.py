"""Local map maintenance: aging, re-expression, and nearest-surface fusion.

The hand-built states pin eviction boundaries and the tie rule exactly;
the scan-based tests check the structural invariants (pixels re-project
onto themselves, normals only where vertices exist, no entry outlives the
time window) after realistic updates.
"""

from __future__ import annotations

import numpy as np
import pytest

from lidom.geometry import Pose, exp_map
from lidom.ground import segment_ground
from lidom.model import ModelState, dump_model_xyz, model_size, update_model
from lidom.normals import NormalMap, WindowLimits, compute_normal_map
from lidom.projection import (
    BevConfig,
    BevMap,
    RangeImage,
    SphericalConfig,
    build_bev_map,
    build_range_image,
)
from lidom._kernels import bev_pixels, spherical_pixels
from lidom.synth import corridor_scene, simulate_scan

SPH = SphericalConfig(width=512, height=32)
BEV = BevConfig(half_extent_x=40.0, half_extent_y=20.0)


def _blank_normals(cfg: SphericalConfig) -> NormalMap:
    h, w = cfg.height, cfg.width
    return NormalMap(
        normals=np.zeros((h, w, 3)),
        curvature=np.full((h, w), -1.0),
        valid=np.zeros((h, w), dtype=bool),
    )


def _image_normals(img: RangeImage, fill=(0.0, 0.0, 1.0)) -> NormalMap:
    """Normal map marking every valid image pixel with one fixed normal."""
    nm = _blank_normals(img.config)
    nm.normals[img.valid] = np.asarray(fill, dtype=float)
    nm.valid[:] = img.valid
    nm.curvature[img.valid] = 0.0
    return nm


def _empty_frame(ts: float = 0.0):
    img = build_range_image(np.empty((0, 3)), SPH, timestamps=ts)
    return img, _blank_normals(SPH), build_bev_map(np.empty((0, 3)), BEV, timestamps=ts)


def _scan_frame(points, ts: float):
    img = build_range_image(points, SPH, timestamps=ts)
    return img, _image_normals(img), build_bev_map(points, BEV, timestamps=ts)


def _wall_points(x=10.0, n=25):
    y, z = np.meshgrid(np.linspace(-3, 3, n), np.linspace(-1, 1, n))
    return np.column_stack([np.full(y.size, x), y.ravel(), z.ravel()])


def _ground_points(z=-1.7, n=30, extent=12.0):
    x, y = np.meshgrid(np.linspace(3, extent, n), np.linspace(-4, 4, n))
    return np.column_stack([x.ravel(), y.ravel(), np.full(x.size, z)])


class TestBootstrap:
    def test_empty_plus_scan_equals_scan(self):
        pts = np.concatenate([_wall_points(), _ground_points()])
        img, nm, bev = _scan_frame(pts, 0.0)
        state = update_model(
            ModelState.empty(SPH, BEV), img, nm, bev, Pose.identity(), 5.0
        )
        assert np.array_equal(state.vertex_map.valid, img.valid)
        assert np.array_equal(state.vertex_map.vertices, img.vertices)
        assert np.array_equal(state.vertex_map.ranges, img.ranges)
        assert np.all(state.vertex_map.timestamps[state.vertex_map.valid] == 5.0)
        assert np.array_equal(state.normal_map.valid, nm.valid)
        assert np.array_equal(
            state.normal_map.normals[nm.valid], nm.normals[nm.valid]
        )
        assert np.array_equal(state.ground_map.cells, bev.cells)
        assert np.array_equal(state.ground_map.vertices, bev.vertices)
        assert np.all(state.ground_map.timestamps == 5.0)

    def test_ground_map_carries_no_normals(self):
        assert not hasattr(BevMap.empty(BEV), "normals")

    def test_empty_everything_stays_empty(self):
        img, nm, bev = _empty_frame()
        state = update_model(
            ModelState.empty(SPH, BEV), img, nm, bev, Pose.identity(), 0.0
        )
        assert model_size(state) == (0, 0, 0)


class TestFusion:
    def test_refuse_same_scan_refreshes_timestamps_only(self):
        pts = np.concatenate([_wall_points(), _ground_points()])
        img, nm, bev = _scan_frame(pts, 0.0)
        once = update_model(
            ModelState.empty(SPH, BEV), img, nm, bev, Pose.identity(), 0.0
        )
        twice = update_model(once, img, nm, bev, Pose.identity(), 1.0)
        assert np.array_equal(twice.vertex_map.valid, once.vertex_map.valid)
        assert np.array_equal(twice.vertex_map.vertices, once.vertex_map.vertices)
        assert np.all(twice.vertex_map.timestamps[twice.vertex_map.valid] == 1.0)
        assert np.array_equal(twice.ground_map.cells, once.ground_map.cells)
        assert np.all(twice.ground_map.timestamps == 1.0)

    def test_nearer_scan_point_replaces_model_point(self):
        far, _, bev0 = _scan_frame(np.array([[10.0, 0.0, 0.0]]), 0.0)
        state = update_model(
            ModelState.empty(SPH, BEV), far, _image_normals(far), bev0,
            Pose.identity(), 0.0,
        )
        near, nm, bev1 = _scan_frame(np.array([[9.0, 0.0, 0.0]]), 1.0)
        fused = update_model(state, near, nm, bev1, Pose.identity(), 1.0)
        v, u = np.argwhere(near.valid)[0]
        assert fused.vertex_map.ranges[v, u] == pytest.approx(9.0)
        assert fused.vertex_map.timestamps[v, u] == 1.0

    def test_nearer_model_point_survives_scan(self):
        near, _, bev0 = _scan_frame(np.array([[9.0, 0.0, 0.0]]), 0.0)
        state = update_model(
            ModelState.empty(SPH, BEV), near, _image_normals(near), bev0,
            Pose.identity(), 0.0,
        )
        far, nm, bev1 = _scan_frame(np.array([[10.0, 0.0, 0.0]]), 1.0)
        fused = update_model(state, far, nm, bev1, Pose.identity(), 1.0)
        v, u = np.argwhere(near.valid)[0]
        assert fused.vertex_map.ranges[v, u] == pytest.approx(9.0)
        # the surviving entry keeps its original birth time
        assert fused.vertex_map.timestamps[v, u] == 0.0


class TestEviction:
    def _aged_state(self, birth_times):
        """One wall point per distinct pixel, each with its own birth time."""
        n = len(birth_times)
        ys = np.linspace(-4, 4, n)
        pts = np.column_stack([np.full(n, 10.0), ys, np.zeros(n)])
        img = build_range_image(pts, SPH, timestamps=np.asarray(birth_times, float))
        bev = build_bev_map(pts, BEV, timestamps=np.asarray(birth_times, float))
        assert int(img.valid.sum()) == n and bev.cells.size == n
        return ModelState(img, _image_normals(img), bev)

    def test_entry_at_window_boundary_survives(self):
        state = self._aged_state([0.0])
        img, nm, bev = _empty_frame()
        kept = update_model(state, img, nm, bev, Pose.identity(), 10.0, window=10.0)
        assert model_size(kept)[0] == 1

    def test_entry_past_window_boundary_is_dropped(self):
        state = self._aged_state([0.0])
        img, nm, bev = _empty_frame()
        gone = update_model(state, img, nm, bev, Pose.identity(), 10.5, window=10.0)
        assert model_size(gone) == (0, 0, 0)

    def test_mixed_ages_evict_exactly_the_stale_entries(self):
        births = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]
        state = self._aged_state(births)
        img, nm, bev = _empty_frame()
        now = 12.25  # survivors: now - t_o <= 10, i.e. births >= 2.25
        kept = update_model(state, img, nm, bev, Pose.identity(), now, window=10.0)
        expect = sorted(t for t in births if now - t <= 10.0)
        assert expect == [3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]
        got_img = sorted(kept.vertex_map.timestamps[kept.vertex_map.valid])
        got_bev = sorted(kept.ground_map.timestamps)
        assert got_img == expect
        assert got_bev == expect

    def test_no_entry_outlives_the_window_after_update(self):
        state = self._aged_state(np.linspace(0.0, 9.0, 10))
        img, nm, bev = _scan_frame(_wall_points(), 11.0)
        out = update_model(state, img, nm, bev, Pose.identity(), 11.0, window=10.0)
        ages = 11.0 - out.vertex_map.timestamps[out.vertex_map.valid]
        gages = 11.0 - out.ground_map.timestamps
        assert np.all(ages <= 10.0)
        assert np.all(gages <= 10.0)


class TestTransform:
    def test_surviving_entries_move_into_the_new_frame(self):
        pts = np.array([[10.0, 0.0, 0.0]])
        img = build_range_image(pts, SPH, timestamps=0.0)
        state = ModelState(img, _image_normals(img, fill=(-1.0, 0.0, 0.0)), BevMap.empty(BEV))
        pose = exp_map(np.array([0.5, 0.0, 0.0, 0.0, 0.0, 0.0]))
        empty_img, empty_nm, empty_bev = _empty_frame()
        moved = update_model(state, empty_img, empty_nm, empty_bev, pose, 1.0)
        got = moved.vertex_map.vertices[moved.vertex_map.valid]
        assert got.shape == (1, 3)
        np.testing.assert_allclose(got[0], [9.5, 0.0, 0.0], atol=1e-12)

    def test_normals_rotate_without_translating(self):
        pts = np.array([[10.0, 0.0, 0.0]])
        img = build_range_image(pts, SPH, timestamps=0.0)
        state = ModelState(img, _image_normals(img, fill=(-1.0, 0.0, 0.0)), BevMap.empty(BEV))
        yaw = np.radians(20.0)
        pose = exp_map(np.array([0.0, 0.0, 0.0, 0.0, 0.0, yaw]))
        empty_img, empty_nm, empty_bev = _empty_frame()
        moved = update_model(state, empty_img, empty_nm, empty_bev, pose, 1.0)
        sel = moved.normal_map.valid
        assert int(sel.sum()) == 1
        expect = pose.rotation.T @ np.array([-1.0, 0.0, 0.0])
        np.testing.assert_allclose(moved.normal_map.normals[sel][0], expect, atol=1e-12)

    def test_entries_leaving_the_view_are_dropped(self):
        # a point near the rear of the sweep translated beyond min_range of
        # the sensor disappears rather than aliasing to a wrong pixel
        pts = np.array([[2.0, 0.0, 0.0]])
        img = build_range_image(pts, SPH, timestamps=0.0)
        state = ModelState(img, _image_normals(img), BevMap.empty(BEV))
        pose = exp_map(np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]))  # point -> 1.0 m
        empty_img, empty_nm, empty_bev = _empty_frame()
        moved = update_model(state, empty_img, empty_nm, empty_bev, pose, 1.0)
        assert model_size(moved)[0] == 0


class TestInvariants:
    @staticmethod
    def _fused_state():
        scene = corridor_scene()
        rng = np.random.default_rng(7)
        state = ModelState.empty(SPH, BEV)
        pose = Pose.identity()
        step = exp_map(np.array([0.4, 0.0, 0.0, 0.0, 0.0, np.radians(0.5)]))
        world = Pose.identity()
        for k in range(3):
            scan = simulate_scan(
                scene, pose=world, beams=SPH.height, azimuth_steps=SPH.width, rng=rng
            )
            img = build_range_image(scan.scan.points, SPH, timestamps=float(k))
            mask = segment_ground(img)
            nm = compute_normal_map(img, mask)
            nonground = img.masked(img.valid & ~mask.ground)
            bev = build_bev_map(img.vertices[mask.ground], BEV, timestamps=float(k))
            rel = pose.inverse() @ world
            state = update_model(state, nonground, nm, bev, rel, float(k))
            pose = world
            world = world @ step
        return state

    def test_valid_pixels_reproject_onto_themselves(self):
        state = self._fused_state()
        img = state.vertex_map
        vs, us = np.nonzero(img.valid)
        pts = np.ascontiguousarray(img.vertices[vs, us])
        u, v, r = spherical_pixels(
            pts, SPH.width, SPH.height, SPH.fov_up, SPH.fov
        )
        assert np.array_equal(u, us)
        assert np.array_equal(v, vs)
        np.testing.assert_allclose(r, img.ranges[vs, us], rtol=0, atol=0)

    def test_normals_only_where_vertices(self):
        state = self._fused_state()
        assert not np.any(state.normal_map.valid & ~state.vertex_map.valid)

    def test_occupied_cells_rebin_onto_themselves(self):
        state = self._fused_state()
        grid = state.ground_map
        k = grid.cells.size
        assert k > 0
        assert np.all(np.diff(grid.cells) > 0)
        assert grid.vertices.shape == (k, 3)
        assert grid.timestamps.shape == (k,)
        u, v, _, inside = bev_pixels(
            np.ascontiguousarray(grid.vertices),
            BEV.half_extent_x, BEV.half_extent_y,
            BEV.cell_size_x, BEV.cell_size_y,
        )
        assert np.all(inside)
        assert np.array_equal(v * BEV.cols + u, grid.cells)

    def test_update_is_deterministic(self):
        a = self._fused_state()
        b = self._fused_state()
        assert np.array_equal(a.vertex_map.vertices, b.vertex_map.vertices)
        assert np.array_equal(a.vertex_map.timestamps, b.vertex_map.timestamps)
        assert np.array_equal(a.ground_map.vertices, b.ground_map.vertices)


class TestModelSize:
    def test_empty_model_counts_zero(self):
        assert model_size(ModelState.empty(SPH, BEV)) == (0, 0, 0)

    def test_bootstrap_counts_match_scan(self):
        pts = np.concatenate([_wall_points(), _ground_points()])
        img, nm, bev = _scan_frame(pts, 0.0)
        state = update_model(
            ModelState.empty(SPH, BEV), img, nm, bev, Pose.identity(), 0.0
        )
        assert model_size(state) == (
            int(img.valid.sum()),
            int(nm.valid.sum()),
            int(bev.cells.size),
        )

    def test_size_stays_bounded_over_many_updates(self):
        pts = np.concatenate([_wall_points(), _ground_points()])
        img, nm, bev = _scan_frame(pts, 0.0)
        cap_img = SPH.width * SPH.height
        cap_bev = BEV.rows * BEV.cols
        state = ModelState.empty(SPH, BEV)
        drift = exp_map(np.array([0.05, 0.0, 0.0, 0.0, 0.0, 0.001]))
        for k in range(100):
            state = update_model(state, img, nm, bev, drift, float(k), window=10.0)
            n_img, n_nrm, n_bev = model_size(state)
            assert n_img <= cap_img and n_bev <= cap_bev and n_nrm <= n_img
        # aging keeps the map from accumulating without bound: with an
        # 11-entry-deep history the count stays well under naive growth
        assert model_size(state)[0] <= 11 * int(img.valid.sum())


class TestDump:
    def test_dump_lists_both_maps_in_image_order(self, tmp_path):
        pts = np.concatenate([_wall_points(n=6), _ground_points(n=6)])
        img, nm, bev = _scan_frame(pts, 0.0)
        state = update_model(
            ModelState.empty(SPH, BEV), img, nm, bev, Pose.identity(), 0.0
        )
        out = tmp_path / "model.xyz"
        dump_model_xyz(state, out)
        rows = np.loadtxt(out).reshape(-1, 3)
        expect = np.concatenate(
            [
                state.vertex_map.vertices[state.vertex_map.valid],
                state.ground_map.vertices,
            ]
        )
        assert rows.shape == expect.shape
        np.testing.assert_allclose(rows, expect, rtol=1e-11, atol=1e-14)


class TestConfigGuards:
    def test_mismatched_image_geometry_is_rejected(self):
        other = SphericalConfig(width=SPH.width // 2, height=SPH.height)
        img = build_range_image(np.array([[10.0, 0.0, 0.0]]), other, timestamps=0.0)
        state = ModelState.empty(SPH, BEV)
        with pytest.raises(ValueError):
            update_model(
                state, img, _blank_normals(other),
                build_bev_map(np.empty((0, 3)), BEV), Pose.identity(), 0.0,
            )

    def test_mismatched_grid_geometry_is_rejected(self):
        img, nm, _ = _empty_frame()
        wrong = build_bev_map(np.empty((0, 3)), BevConfig(half_extent_x=10.0))
        with pytest.raises(ValueError):
            update_model(
                ModelState.empty(SPH, BEV), img, nm, wrong, Pose.identity(), 0.0
            )
