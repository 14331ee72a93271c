import math

import numpy as np
import pytest

from lockit.errors import DegenerateMotion
from lockit.geometry import (OdometryDelta, Pose2, RigidTransform3, angular_difference_deg,
                             wrap_angle, yaw_from_consecutive)


def test_wrap_angle_interval():
    for theta in np.linspace(-10, 10, 101):
        w = wrap_angle(theta)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.sin(w), math.sin(theta), abs_tol=1e-12)
        assert math.isclose(math.cos(w), math.cos(theta), abs_tol=1e-12)


def test_pose2_wraps_theta():
    p = Pose2(0, 0, 3 * math.pi)
    assert math.isclose(p.theta, math.pi)
    with pytest.raises(ValueError):
        Pose2(math.nan, 0, 0)


def test_odometry_distance():
    assert math.isclose(OdometryDelta(3, 4, 0).distance, 5.0)


def test_transform_compose_inverse():
    a = RigidTransform3.from_yaw_xyz(0.7, 1, 2, 0.5)
    b = RigidTransform3.from_yaw_xyz(-1.2, -3, 0.4, 0)
    pts = np.random.default_rng(0).normal(size=(20, 3))
    np.testing.assert_allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)
    np.testing.assert_allclose(a.inverse().apply(a.apply(pts)), pts, atol=1e-12)
    np.testing.assert_allclose(a.compose(a.inverse()).matrix(), np.eye(4), atol=1e-12)


def test_transform_rejects_reflection():
    bad = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        RigidTransform3(bad, np.zeros(3))


def test_transform_pose2_round_trip():
    p = Pose2(2.5, -1.0, 0.9)
    assert RigidTransform3.from_pose2(p).to_pose2() == p


def test_yaw_from_consecutive():
    assert yaw_from_consecutive(Pose2(0, 0, 0), Pose2(1, 0, 0)) == 0.0
    assert math.isclose(yaw_from_consecutive(Pose2(0, 0, 0), Pose2(0, 1, 0)), math.pi / 2)
    assert math.isclose(yaw_from_consecutive(Pose2(1, 1, 0), Pose2(0, 0, 0)), -3 * math.pi / 4)
    with pytest.raises(DegenerateMotion):
        yaw_from_consecutive(Pose2(1, 1, 0), Pose2(1, 1, 2))


def test_angular_difference_wraps():
    assert math.isclose(angular_difference_deg(179, -179), 2.0)
    assert math.isclose(angular_difference_deg(0, 180), 180.0)
    assert math.isclose(angular_difference_deg(10, 10), 0.0)
