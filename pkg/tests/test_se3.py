from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import matrix_to_quaternion, quaternion_angle, rotation_from_axis_angle
from posecast import se3
from posecast.errors import DegenerateRotation, SequenceTooShort

RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])

angles = st.floats(-math.pi, math.pi, allow_nan=False)
axes = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(lambda a: np.linalg.norm(a) > 1e-3)


def test_encode_examples():
    np.testing.assert_array_equal(se3.rot6d_encode(np.eye(3)), [1, 0, 0, 0, 1, 0])
    np.testing.assert_allclose(se3.rot6d_encode(RZ90), [0, 1, 0, -1, 0, 0], atol=0)


def test_decode_examples():
    np.testing.assert_allclose(se3.rot6d_decode([1, 0, 0, 0, 1, 0]), np.eye(3))
    np.testing.assert_allclose(se3.rot6d_decode([2, 0, 0, 0, 3, 0]), np.eye(3))
    R = se3.rot6d_decode([1, 1, 0, 0, 1, 0])
    h = math.sqrt(2) / 2
    np.testing.assert_allclose(R[:, 0], [h, h, 0], atol=1e-15)
    np.testing.assert_allclose(R[:, 1], [-h, h, 0], atol=1e-15)
    np.testing.assert_allclose(R[:, 2], [0, 0, 1], atol=1e-15)


@pytest.mark.parametrize("r6", [[0, 0, 0, 0, 1, 0], [1, 0, 0, 2, 0, 0], [np.nan, 0, 0, 0, 1, 0]])
def test_decode_degenerate(r6):
    with pytest.raises(DegenerateRotation):
        se3.rot6d_decode(r6)


@settings(max_examples=60, deadline=None)
@given(axes, angles)
def test_codec_roundtrip_property(axis, angle):
    R = rotation_from_axis_angle(axis, angle)
    back = se3.rot6d_decode(se3.rot6d_encode(R))
    np.testing.assert_allclose(back, R, atol=1e-12)
    np.testing.assert_allclose(back.T @ back, np.eye(3), atol=1e-12)
    assert np.linalg.det(back) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=6, max_size=6))
def test_decode_always_orthonormal(r6):
    try:
        R = se3.rot6d_decode(r6)
    except DegenerateRotation:
        return
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert np.linalg.det(R) > 0


def test_geodesic_examples():
    assert se3.geodesic_angle(np.eye(3), np.eye(3)) == 0.0
    assert se3.geodesic_angle(np.eye(3), RZ90) == pytest.approx(math.pi / 2, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(axes, angles, axes, angles)
def test_geodesic_matches_quaternion_oracle(a1, th1, a2, th2):
    R1, R2 = rotation_from_axis_angle(a1, th1), rotation_from_axis_angle(a2, th2)
    d = float(se3.geodesic_angle(R1, R2))
    assert 0.0 <= d <= math.pi
    assert d == pytest.approx(quaternion_angle(R1, R2), abs=1e-6)
    assert d == pytest.approx(float(se3.geodesic_angle(R2, R1)), abs=1e-12)


def test_axis_angle_agrees_with_quaternion_route(rng):
    for _ in range(20):
        axis, angle = rng.standard_normal(3), rng.uniform(-3, 3)
        np.testing.assert_allclose(se3.axis_angle_matrix(axis, angle), rotation_from_axis_angle(axis, angle), atol=1e-12)


def test_random_rotations_valid(rng):
    R = se3.random_rotations(rng, 100)
    np.testing.assert_allclose(R @ np.swapaxes(R, -1, -2), np.broadcast_to(np.eye(3), R.shape), atol=1e-12)
    assert np.allclose(np.linalg.det(R), 1.0)
    q = matrix_to_quaternion(R[0])
    assert abs(np.linalg.norm(q) - 1) < 1e-12


def test_increment_examples():
    p = se3.make_pose(RZ90, [1, 2, 3])
    dt, dR = se3.pose_increment(p, p)
    np.testing.assert_array_equal(dt, 0)
    np.testing.assert_allclose(dR, np.eye(3), atol=1e-15)
    q = se3.make_pose(np.eye(3), [0, 0, 1.0])
    dt, dR = se3.pose_increment(q, se3.make_pose(np.eye(3), [0, 0, 1.1]))
    np.testing.assert_allclose(dt, [0, 0, 0.1], atol=1e-15)
    np.testing.assert_array_equal(dR, np.eye(3))


def test_apply_increment_inverts(rng):
    for _ in range(10):
        a = se3.make_pose(se3.random_rotations(rng, 1)[0], rng.standard_normal(3))
        b = se3.make_pose(se3.random_rotations(rng, 1)[0], rng.standard_normal(3))
        np.testing.assert_allclose(se3.apply_increment(a, *se3.pose_increment(a, b)), b, atol=1e-12)


def test_second_difference_examples():
    poses = se3.make_pose(np.eye(3), np.array([[0, 0, 1.0], [0, 0, 1.1], [0, 0, 1.4]]))
    d2t, d2R = se3.second_difference(*se3.increments(poses))
    np.testing.assert_allclose(d2t, [[0, 0, 0.2]], atol=1e-12)
    np.testing.assert_allclose(d2R, [np.eye(3)], atol=1e-15)


def test_constant_velocity_has_zero_second_difference():
    k = np.arange(6)
    R = np.stack([se3.axis_angle_matrix([0.3, 1, 0.2], 0.1 * i) for i in k])
    poses = se3.make_pose(R, np.stack([0.05 * k, -0.02 * k, 1 + 0.1 * k], axis=-1))
    d2t, d2R = se3.second_difference(*se3.increments(poses))
    np.testing.assert_allclose(d2t, 0, atol=1e-12)
    assert np.all(se3.geodesic_angle(d2R, np.eye(3)) < 1e-9)


def test_second_difference_too_short():
    poses = se3.identity_pose(2)
    with pytest.raises(SequenceTooShort):
        se3.second_difference(*se3.increments(poses))


def test_reexpress_examples(rng):
    obj = se3.make_pose(se3.random_rotations(rng, 1)[0], [0.1, 0.2, 2.0])
    cam = se3.make_pose(se3.random_rotations(rng, 1)[0], rng.standard_normal(3))
    np.testing.assert_allclose(se3.reexpress_in_anchor(obj, cam, cam), obj, atol=1e-12)

    # static world object; camera t sits 1 m further along +x than the anchor camera
    obj_world = se3.make_pose(np.eye(3), [0.0, 0.0, 2.0])
    cam_anchor = se3.identity_pose()
    cam_t = se3.make_pose(np.eye(3), [1.0, 0.0, 0.0])
    in_cam_t = se3.invert_pose(cam_t) @ obj_world
    assert in_cam_t[0, 3] == pytest.approx(-1.0)
    np.testing.assert_allclose(se3.reexpress_in_anchor(in_cam_t, cam_t, cam_anchor), obj_world, atol=1e-12)


def test_moving_camera_static_object_is_constant(rng):
    obj_world = se3.make_pose(se3.random_rotations(rng, 1)[0], [0.3, 0.1, 3.0])
    cams = [se3.make_pose(se3.random_rotations(rng, 1)[0], rng.standard_normal(3)) for _ in range(5)]
    anchor = cams[2]
    out = [se3.reexpress_in_anchor(se3.invert_pose(c) @ obj_world, c, anchor) for c in cams]
    for p in out:
        np.testing.assert_allclose(p, out[0], atol=1e-9)


def test_vec9_roundtrip(rng):
    p = se3.make_pose(se3.random_rotations(rng, 4), rng.standard_normal((4, 3)))
    np.testing.assert_allclose(se3.pose_from_vec9(se3.pose_to_vec9(p)), p, atol=1e-12)


def test_invert_pose(rng):
    p = se3.make_pose(se3.random_rotations(rng, 3), rng.standard_normal((3, 3)))
    np.testing.assert_allclose(se3.invert_pose(p) @ p, se3.identity_pose(3), atol=1e-12)


def test_chord_angle_oracle_agrees(rng):
    from oracles import chord_angle

    R = se3.random_rotations(rng, 50)
    S = se3.random_rotations(rng, 50)
    np.testing.assert_allclose(chord_angle(R, S), se3.geodesic_angle(R, S), atol=1e-7)
