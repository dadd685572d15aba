import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artopen.se3 import (
    DEFAULT_GRIPPER,
    EEPoints,
    SE3Pose,
    compose,
    decode_6d,
    ee_points_from_pose,
    encode_6d,
    fit_pose_from_points,
    inverse,
    is_rotation,
    pose_from_bytes,
    pose_from_dict,
    pose_to_bytes,
    pose_to_dict,
    random_pose,
    random_rotation,
    rot_x,
    rot_z,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def _ssr(pose, src, dst):
    return float(((pose.apply(src) - dst) ** 2).sum())


def test_compose_identity_and_inverse(rng):
    for _ in range(50):
        p = random_pose(rng, 3.0)
        assert compose(SE3Pose.identity(), p).allclose(p, 1e-12)
        e = compose(p, inverse(p))
        assert np.abs(e.matrix() - np.eye(4)).max() < 1e-12


def test_compose_hand_multiplied():
    a = SE3Pose(rot_z(math.pi / 2), [1.0, 0.0, 0.0])
    b = SE3Pose(rot_z(math.pi / 2), [0.0, 0.0, 0.0])
    want = np.array([[-1.0, 0, 0, 1.0], [0, -1.0, 0, 0], [0, 0, 1.0, 0], [0, 0, 0, 1.0]])
    assert np.abs(compose(a, b).matrix() - want).max() < 1e-12


def test_compose_associative(rng):
    for _ in range(20):
        a, b, c = (random_pose(rng) for _ in range(3))
        assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)), 1e-12)


def test_inverse_examples():
    assert inverse(SE3Pose.identity()).allclose(SE3Pose.identity(), 0.0)
    t = inverse(SE3Pose.from_translation([1.0, 2.0, 3.0]))
    assert np.array_equal(t.translation, [-1.0, -2.0, -3.0])
    p = SE3Pose(rot_z(math.radians(30)), [0.3, -0.2, 1.0])
    assert np.abs((inverse(p) @ p).matrix() - np.eye(4)).max() < 1e-12


def test_encode_identity_and_hand_gram_schmidt():
    assert np.array_equal(encode_6d(np.eye(3)), [1, 0, 0, 0, 1, 0])
    assert np.abs(decode_6d([2, 0, 0, 1, 1, 0]) - np.eye(3)).max() < 1e-15
    r = rot_x(math.radians(45))
    assert np.abs(decode_6d(encode_6d(r)) - r).max() < 1e-9


def test_6d_round_trip_and_validity(rng):
    for _ in range(1000):
        r = random_rotation(rng)
        assert np.abs(decode_6d(encode_6d(r)) - r).max() < 1e-9
    for _ in range(10_000):
        v = rng.normal(size=6)
        assert is_rotation(decode_6d(v))


@pytest.mark.parametrize("v", [[0, 0, 0, 0, 1, 0], [1, 0, 0, 2, 0, 0], [1e-9, 0, 0, 0, 1, 0], [1, 0, 0, 0, 0, 0]])
def test_6d_degenerate(v):
    with pytest.raises(ValueError):
        decode_6d(v)


def test_ee_points_template():
    ee = ee_points_from_pose(SE3Pose.identity(), 0.0)
    assert np.array_equal(ee.points[1], ee.points[2])
    ee = ee_points_from_pose(SE3Pose.identity(), 0.08)
    assert np.allclose(ee.points[1], [0, 0.04, DEFAULT_GRIPPER.finger_length], atol=1e-15)
    assert np.allclose(ee.points[2], [0, -0.04, DEFAULT_GRIPPER.finger_length], atol=1e-15)
    assert np.allclose(ee.points[3], (ee.points[1] + ee.points[2]) / 2)
    assert np.array_equal(ee.points[0], [0, 0, 0])
    t = np.array([0.1, -0.5, 2.0])
    moved = ee_points_from_pose(SE3Pose.from_translation(t), 0.05)
    assert np.allclose(moved.points - ee_points_from_pose(SE3Pose.identity(), 0.05).points, t, atol=1e-15)


@pytest.mark.parametrize("w", [-0.001, 0.0801])
def test_ee_points_width_range(w):
    with pytest.raises(ValueError):
        ee_points_from_pose(SE3Pose.identity(), w)


def test_ee_points_equivariance_and_distances(rng):
    tmpl = ee_points_from_pose(SE3Pose.identity(), 0.06).points
    d0 = np.linalg.norm(tmpl[:, None] - tmpl[None], axis=-1)
    for _ in range(100):
        g, p = random_pose(rng), random_pose(rng)
        a = ee_points_from_pose(g @ p, 0.06)
        b = ee_points_from_pose(p, 0.06).transformed(g)
        assert np.abs(a.points - b.points).max() < 1e-12
        d = np.linalg.norm(a.points[:, None] - a.points[None], axis=-1)
        assert np.abs(d - d0).max() < 1e-6


def test_fit_identity_and_exact_recovery(rng):
    src = ee_points_from_pose(random_pose(rng), 0.04)
    assert fit_pose_from_points(src, src.points).allclose(SE3Pose.identity(), 1e-12)
    for _ in range(1000):
        t = random_pose(rng, 2.0)
        pts = rng.normal(size=(4, 3))
        assert fit_pose_from_points(pts, t.apply(pts)).allclose(t, 1e-9)


def test_fit_random_search_oracle(rng):
    for _ in range(5):
        src = rng.normal(size=(4, 3))
        dst = random_pose(rng).apply(src) + rng.normal(scale=0.05, size=(4, 3))
        best = fit_pose_from_points(src, dst)
        base = _ssr(best, src, dst)
        for _ in range(1000):
            w = rng.normal(scale=0.05, size=3)
            alt = SE3Pose(decode_6d(encode_6d(np.eye(3) + np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]]))) @ best.rotation, best.translation + rng.normal(scale=0.02, size=3))
            assert base <= _ssr(alt, src, dst) + 1e-12


def test_fit_degenerate():
    line = np.outer(np.arange(4.0), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        fit_pose_from_points(line, line)


def test_fit_reflection_is_rejected(rng):
    # a mirrored target must still give a proper rotation
    src = rng.normal(size=(4, 3))
    dst = src * np.array([1.0, 1.0, -1.0])
    assert is_rotation(fit_pose_from_points(src, dst).rotation)


def test_pose_bytes_layout():
    p = SE3Pose(rot_z(0.3), [1.0, 2.0, 3.0])
    buf = pose_to_bytes(p)
    assert len(buf) == 12 * 8
    assert struct.unpack("<3d", buf[:24]) == (1.0, 2.0, 3.0)
    assert np.array_equal(np.array(struct.unpack("<9d", buf[24:])).reshape(3, 3), p.rotation)
    assert pose_from_bytes(buf).allclose(p, 0.0)


def test_pose_dict_round_trip(rng):
    p = random_pose(rng)
    assert pose_from_dict(pose_to_dict(p)).allclose(p, 1e-15)


@given(st.lists(finite, min_size=6, max_size=6))
@settings(max_examples=200, deadline=None)
def test_decode_always_rotation_or_error(v):
    try:
        r = decode_6d(v)
    except ValueError:
        return
    assert is_rotation(r)


def test_eepoints_negative_width():
    with pytest.raises(ValueError):
        EEPoints(np.zeros((4, 3)), -1.0)
