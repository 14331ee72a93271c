"""Planar poses, odometry deltas and 6-DoF rigid transforms."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMotion


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    theta = math.fmod(theta, 2.0 * math.pi)
    if theta <= -math.pi:
        theta += 2.0 * math.pi
    elif theta > math.pi:
        theta -= 2.0 * math.pi
    return theta


def angular_difference_deg(a_deg: float, b_deg: float) -> float:
    """Absolute difference of two headings in degrees, wrapped to [0, 180]."""
    d = abs(a_deg - b_deg) % 360.0
    return min(d, 360.0 - d)


@dataclass(frozen=True)
class Pose2:
    """Planar robot state (x, y, theta), theta in (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError("Pose2 fields must be finite")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class OdometryDelta:
    """Relative odometry (dx, dy, dtheta) between consecutive poses."""

    dx: float
    dy: float
    dtheta: float

    @property
    def distance(self) -> float:
        return math.hypot(self.dx, self.dy)


class RigidTransform3:
    """Proper rigid transform in 3D: rotation (3x3, det +1) plus translation."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation: np.ndarray, translation: np.ndarray):
        rotation = np.asarray(rotation, dtype=float)
        translation = np.asarray(translation, dtype=float).reshape(3)
        if rotation.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal")
        if not math.isclose(float(np.linalg.det(rotation)), 1.0, abs_tol=1e-6):
            raise ValueError("rotation determinant is not +1")
        self.rotation = rotation
        self.translation = translation

    @classmethod
    def identity(cls) -> "RigidTransform3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw_xyz(cls, yaw: float, x: float = 0.0, y: float = 0.0, z: float = 0.0) -> "RigidTransform3":
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(rot, np.array([x, y, z]))

    @classmethod
    def from_pose2(cls, pose: Pose2) -> "RigidTransform3":
        return cls.from_yaw_xyz(pose.theta, pose.x, pose.y, 0.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform3") -> "RigidTransform3":
        """self after other: (self @ other).apply(p) == self.apply(other.apply(p))."""
        return RigidTransform3(self.rotation @ other.rotation,
                               self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform3":
        rot_t = self.rotation.T
        return RigidTransform3(rot_t, -rot_t @ self.translation)

    @property
    def yaw(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def to_pose2(self) -> Pose2:
        return Pose2(float(self.translation[0]), float(self.translation[1]), self.yaw)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __repr__(self):
        t = self.translation
        return f"RigidTransform3(yaw={self.yaw:.4f}, t=[{t[0]:.3f}, {t[1]:.3f}, {t[2]:.3f}])"


def yaw_from_consecutive(prev: Pose2, curr: Pose2) -> float:
    """Heading of travel implied by two consecutive planar positions."""
    dx = curr.x - prev.x
    dy = curr.y - prev.y
    if math.hypot(dx, dy) < 1e-6:
        raise DegenerateMotion("consecutive poses coincide; heading undefined")
    return math.atan2(dy, dx)
