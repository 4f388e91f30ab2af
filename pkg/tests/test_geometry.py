"""SE(3) primitives checked against quaternion and matrix-log oracles."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidom.geometry import Pose, exp_map, pose_delta, rotation_angle, skew

from oracles import manual_cross, quaternion_rotation, se3_log

finite_vec = st.lists(
    st.floats(-100.0, 100.0, allow_nan=False), min_size=3, max_size=3
).map(np.array)


def test_skew_zero():
    assert np.array_equal(skew(np.zeros(3)), np.zeros((3, 3)))


def test_skew_unit_z():
    expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert np.array_equal(skew(np.array([0.0, 0.0, 1.0])), expected)


def test_skew_matches_cross_product():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a, b = rng.normal(size=(2, 3))
        np.testing.assert_allclose(skew(a) @ b, manual_cross(a, b), atol=1e-12)


@given(finite_vec)
def test_skew_antisymmetric(v):
    s = skew(v)
    assert np.array_equal(s, -s.T)


def test_exp_zero_twist_is_identity():
    pose = exp_map(np.zeros(6))
    assert np.array_equal(pose.rotation, np.eye(3))
    assert np.array_equal(pose.translation, np.zeros(3))


def test_exp_quarter_turn_about_z():
    pose = exp_map([0.0, 0.0, 0.0, 0.0, 0.0, np.pi / 2])
    expected = quaternion_rotation([0, 0, 1], np.pi / 2)
    np.testing.assert_allclose(pose.rotation, expected, atol=1e-12)
    np.testing.assert_allclose(pose.translation, np.zeros(3), atol=1e-15)


def test_exp_pure_translation():
    pose = exp_map([1.0, 2.0, 3.0, 0.0, 0.0, 0.0])
    assert np.array_equal(pose.rotation, np.eye(3))
    assert np.array_equal(pose.translation, np.array([1.0, 2.0, 3.0]))


def test_exp_small_angle_series():
    w = np.array([1e-9, -2e-9, 5e-10])
    pose = exp_map(np.concatenate([[0.5, 0.0, 0.0], w]))
    np.testing.assert_allclose(pose.rotation, np.eye(3) + skew(w), atol=1e-18)
    np.testing.assert_allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-12)


def test_exp_rotation_matches_quaternion_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(-3.0, 3.0)
        pose = exp_map(np.concatenate([np.zeros(3), axis * angle]))
        np.testing.assert_allclose(
            pose.rotation, quaternion_rotation(axis, angle), atol=1e-12
        )


def test_exp_then_log_recovers_twist():
    rng = np.random.default_rng(3)
    for _ in range(60):
        w = rng.normal(size=3)
        norm = np.linalg.norm(w)
        if norm > 3.0:
            w *= 3.0 * rng.uniform(0.1, 1.0) / norm
        twist = np.concatenate([rng.uniform(-10, 10, 3), w])
        pose = exp_map(twist)
        recovered = se3_log(pose.matrix())
        np.testing.assert_allclose(recovered, twist, atol=1e-6)


def test_compose_inverse_is_identity():
    rng = np.random.default_rng(5)
    for _ in range(20):
        pose = exp_map(rng.uniform(-1, 1, 6))
        ident = pose @ pose.inverse()
        np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(ident.translation, np.zeros(3), atol=1e-9)


def test_compose_opposite_twists():
    rng = np.random.default_rng(9)
    for _ in range(100):
        twist = rng.uniform(-2, 2, 6)
        ident = exp_map(twist) @ exp_map(-twist)
        np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(ident.translation, np.zeros(3), atol=1e-9)


def test_transform_point_identity():
    p = np.array([0.3, -2.0, 7.0])
    assert np.array_equal(Pose.identity().transform(p), p)


def test_transform_matches_matrix_product():
    rng = np.random.default_rng(13)
    pose = exp_map(rng.uniform(-1, 1, 6))
    pts = rng.normal(size=(40, 3))
    expected = (pose.matrix() @ np.hstack([pts, np.ones((40, 1))]).T).T[:, :3]
    np.testing.assert_allclose(pose.transform(pts), expected, atol=1e-12)


def test_ten_thousand_updates_stay_orthonormal():
    rng = np.random.default_rng(17)
    pose = Pose.identity()
    for _ in range(10_000):
        step = rng.normal(scale=1e-2, size=6)
        pose = (exp_map(step) @ pose).orthonormalized()
    gram = pose.rotation.T @ pose.rotation
    assert np.abs(gram - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(pose.rotation) - 1.0) < 1e-9


def test_rotation_angle_of_known_turn():
    r = quaternion_rotation([0, 1, 0], 0.7)
    assert abs(rotation_angle(r) - 0.7) < 1e-12


def test_pose_delta_split():
    a = exp_map([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    b = exp_map([1.0, 0.0, 2.0, 0.0, 0.0, 0.0])
    dt, dr = pose_delta(a, b)
    assert abs(dt - 2.0) < 1e-12
    assert dr < 1e-12


def test_from_matrix_round_trip():
    rng = np.random.default_rng(23)
    pose = exp_map(rng.uniform(-2, 2, 6))
    again = Pose.from_matrix(pose.matrix())
    assert np.array_equal(again.rotation, pose.rotation)
    assert np.array_equal(again.translation, pose.translation)
