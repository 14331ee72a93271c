"""Deterministic synthetic benchmark environment.

Worlds are collections of boxes, cylinders and walls on a ground plane.
Scans are ray-cast over an azimuth-by-elevation grid from a sensor mounted
at fixed height, with Gaussian range noise; odometry is derived from the
ground-truth poses with injected noise. Everything is reproducible from
seeds, so downstream tests can make absolute-error assertions.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import EmptyCloud, ExtentTooSmall, TooShort
from .features import synthetic_global
from .geometry import OdometryDelta, Pose2, wrap_angle

SENSOR_HEIGHT_M = 1.5


@dataclass
class Obstacle:
    """A world primitive: 'box' (cx, cy, sx, sy, sz, yaw) or
    'cylinder' (cx, cy, radius, height)."""

    kind: str
    params: dict

    def to_json(self):
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_json(cls, row):
        row = dict(row)
        kind = row.pop("kind")
        return cls(kind, row)


@dataclass
class World:
    obstacles: list[Obstacle]
    extent: tuple[float, float, float, float]   # xmin, ymin, xmax, ymax
    seed: int = 0

    def save(self, path):
        doc = {"extent": list(self.extent), "seed": self.seed,
               "obstacles": [o.to_json() for o in self.obstacles]}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        return cls([Obstacle.from_json(o) for o in doc["obstacles"]],
                   tuple(doc["extent"]), doc.get("seed", 0))


@dataclass
class SimTrajectory:
    truth: list[Pose2]                    # noise-free poses
    odometry: list[OdometryDelta]         # noisy relative deltas
    poses: list[Pose2] = field(default_factory=list)  # dead-reckoned from odometry


def generate_world(seed: int, n_obstacles: int, extent, margin: float = 4.0,
                   check_distinctiveness: bool = False) -> World:
    """Scatter random primitives inside the extent, reproducibly from seed.

    With check_distinctiveness on, worlds whose coarse scan descriptors look
    alike anywhere on a 10 m grid are rejected and regenerated from a derived
    seed, guaranteeing structurally distinct neighborhoods.
    """
    if n_obstacles < 1:
        raise ValueError("n_obstacles must be at least 1")
    xmin, ymin, xmax, ymax = extent
    if xmax - xmin < 2 * margin + 2 or ymax - ymin < 2 * margin + 2:
        raise ExtentTooSmall(f"extent {extent} too small for margin {margin}")
    if (xmax - xmin) * (ymax - ymin) < 4.0 * n_obstacles:
        raise ExtentTooSmall("extent cannot hold the requested obstacle count")
    for attempt in range(8):
        world = _generate_once(seed + 1000 * attempt, n_obstacles, extent, margin)
        if not check_distinctiveness or _is_distinct(world):
            return world
    return world


def _generate_once(seed, n_obstacles, extent, margin) -> World:
    xmin, ymin, xmax, ymax = extent
    rng = np.random.default_rng(seed)
    obstacles: list[Obstacle] = []
    # perimeter walls keep every scan populated
    wall_h = 4.0
    thickness = 0.4
    for cx, cy, sx, sy in [
        ((xmin + xmax) / 2, ymin, xmax - xmin, thickness),
        ((xmin + xmax) / 2, ymax, xmax - xmin, thickness),
        (xmin, (ymin + ymax) / 2, thickness, ymax - ymin),
        (xmax, (ymin + ymax) / 2, thickness, ymax - ymin),
    ]:
        obstacles.append(Obstacle("box", {"cx": cx, "cy": cy, "sx": sx, "sy": sy,
                                          "sz": wall_h, "yaw": 0.0}))
    for _ in range(n_obstacles):
        cx = rng.uniform(xmin + margin, xmax - margin)
        cy = rng.uniform(ymin + margin, ymax - margin)
        if rng.random() < 0.6:
            obstacles.append(Obstacle("box", {
                "cx": cx, "cy": cy,
                "sx": float(rng.uniform(0.8, 5.0)),
                "sy": float(rng.uniform(0.8, 5.0)),
                "sz": float(rng.uniform(1.0, 5.0)),
                "yaw": float(rng.uniform(0, math.pi)),
            }))
        else:
            obstacles.append(Obstacle("cylinder", {
                "cx": cx, "cy": cy,
                "radius": float(rng.uniform(0.3, 2.0)),
                "height": float(rng.uniform(1.0, 5.0)),
            }))
    return World(obstacles, tuple(extent), seed)


def _is_distinct(world: World, grid_step: float = 10.0, threshold: float = 0.05) -> bool:
    xmin, ymin, xmax, ymax = world.extent
    descriptors = []
    for x in np.arange(xmin + 5, xmax - 4, grid_step):
        for y in np.arange(ymin + 5, ymax - 4, grid_step):
            scan = simulate_scan(world, Pose2(float(x), float(y), 0.0),
                                 beam_count=(8, 90), max_range_m=30.0,
                                 noise_sigma_m=0.0, seed=0)
            if len(scan) == 0:
                continue
            descriptors.append(synthetic_global(PointCloud(scan.points / 30.0)).values)
    descriptors = np.array(descriptors)
    for i in range(len(descriptors)):
        d = np.linalg.norm(descriptors[i + 1:] - descriptors[i], axis=1)
        if d.size and d.min() < threshold:
            return False
    return True


# ---------------------------------------------------------------------------
# ray casting

def _ray_box(origin, dirs, obs) -> np.ndarray:
    """Slab intersection of rays with a yawed box standing on the ground.
    Returns hit distance per ray (inf on miss)."""
    cx, cy = obs["cx"], obs["cy"]
    half = np.array([obs["sx"] / 2, obs["sy"] / 2, obs["sz"] / 2])
    center = np.array([cx, cy, obs["sz"] / 2])
    yaw = obs.get("yaw", 0.0)
    c, s = math.cos(-yaw), math.sin(-yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    o = rot @ (origin - center)
    d = dirs @ rot.T
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    t = np.where((tmax >= tmin) & (tmax > 0), np.maximum(tmin, 1e-9), np.inf)
    # rays starting inside hit the far face; keep only entry hits
    t = np.where(tmin > 0, t, np.inf)
    return t


def _ray_cylinder(origin, dirs, obs) -> np.ndarray:
    cx, cy, r, h = obs["cx"], obs["cy"], obs["radius"], obs["height"]
    ox, oy = origin[0] - cx, origin[1] - cy
    dx, dy = dirs[:, 0], dirs[:, 1]
    a = dx * dx + dy * dy
    b = 2 * (ox * dx + oy * dy)
    cc = ox * ox + oy * oy - r * r
    disc = b * b - 4 * a * cc
    t = np.full(dirs.shape[0], np.inf)
    ok = (disc >= 0) & (a > 1e-12)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    tc = (-b - sq) / np.where(ok, 2 * a, 1.0)
    z = origin[2] + tc * dirs[:, 2]
    hit = ok & (tc > 1e-9) & (z >= 0.0) & (z <= h)
    t[hit] = tc[hit]
    return t


def _ray_ground(origin, dirs) -> np.ndarray:
    dz = dirs[:, 2]
    with np.errstate(divide="ignore"):
        t = -origin[2] / dz
    return np.where((dz < 0) & (t > 1e-9), t, np.inf)


def simulate_scan(world: World, pose: Pose2, beam_count=(32, 360),
                  max_range_m: float = 50.0, noise_sigma_m: float = 0.0,
                  seed: int = 0) -> PointCloud:
    """Ray-cast a scan from pose; the returned cloud is in the sensor frame
    (x forward along the heading, z up, origin at the sensor)."""
    xmin, ymin, xmax, ymax = world.extent
    if not (xmin <= pose.x <= xmax and ymin <= pose.y <= ymax):
        raise ValueError(f"pose {pose} outside world extent")
    rings, n_az = beam_count
    elev = np.linspace(math.radians(-30.0), math.radians(10.0), rings)
    azim = pose.theta + np.linspace(0.0, 2 * math.pi, n_az, endpoint=False)
    el, az = np.meshgrid(elev, azim, indexing="ij")
    ce = np.cos(el.ravel())
    dirs = np.stack([ce * np.cos(az.ravel()), ce * np.sin(az.ravel()),
                     np.sin(el.ravel())], axis=1)
    origin = np.array([pose.x, pose.y, SENSOR_HEIGHT_M])
    t = _ray_ground(origin, dirs)
    for obs in world.obstacles:
        if obs.kind == "box":
            t = np.minimum(t, _ray_box(origin, dirs, obs.params))
        elif obs.kind == "cylinder":
            t = np.minimum(t, _ray_cylinder(origin, dirs, obs.params))
        else:
            raise ValueError(f"unknown obstacle kind {obs.kind!r}")
    if noise_sigma_m > 0:
        rng = np.random.default_rng(seed)
        t = t + rng.normal(0.0, noise_sigma_m, size=t.shape)
    hit = t <= max_range_m
    if not hit.any():
        return PointCloud.empty()
    world_pts = origin + t[hit, None] * dirs[hit]
    rel = world_pts - origin
    c, s = math.cos(-pose.theta), math.sin(-pose.theta)
    sensor = np.stack([c * rel[:, 0] - s * rel[:, 1],
                       s * rel[:, 0] + c * rel[:, 1],
                       rel[:, 2]], axis=1)
    return PointCloud(sensor)


# ---------------------------------------------------------------------------
# trajectories and odometry

def waypoint_path(waypoints, step_m: float = 1.0) -> list[Pose2]:
    """Poses spaced at fixed arc length along a polyline, heading along the
    direction of travel."""
    waypoints = [np.asarray(w, dtype=float) for w in waypoints]
    if len(waypoints) < 2:
        raise TooShort("need at least two waypoints")
    positions = []
    leftover = 0.0
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        seg = b - a
        length = float(np.linalg.norm(seg))
        if length < 1e-12:
            continue
        s = leftover
        while s < length:
            positions.append(a + (s / length) * seg)
            s += step_m
        leftover = s - length
    if len(positions) < 2:
        raise TooShort("path shorter than one step")
    # heading = direction of the step arriving at each pose, so that the
    # particle motion model composes the resulting odometry exactly
    poses = []
    for i, p in enumerate(positions):
        a = positions[max(i - 1, 0)]
        b = positions[i] if i > 0 else positions[1]
        heading = math.atan2(b[1] - a[1], b[0] - a[0])
        poses.append(Pose2(float(p[0]), float(p[1]), heading))
    return poses


def simulate_odometry(truth: list[Pose2], noise: tuple[float, float] = (0.0, 0.0),
                      seed: int = 0) -> list[OdometryDelta]:
    """Relative odometry between consecutive truth poses with zero-mean
    Gaussian noise: the distance noise std is noise[0] times the travelled
    distance, the heading noise std is noise[1] radians."""
    if len(truth) < 2:
        raise TooShort("need at least two poses")
    sigma_d_frac, sigma_theta = noise
    rng = np.random.default_rng(seed)
    deltas = []
    for prev, curr in zip(truth[:-1], truth[1:]):
        dx_g = curr.x - prev.x
        dy_g = curr.y - prev.y
        d = math.hypot(dx_g, dy_g)
        dtheta = wrap_angle(curr.theta - prev.theta)
        if sigma_d_frac > 0:
            d = d + rng.normal(0.0, sigma_d_frac * d) if d > 0 else d
        if sigma_theta > 0:
            dtheta = dtheta + rng.normal(0.0, sigma_theta)
        # robot-frame delta consistent with the noisy travelled distance
        heading = wrap_angle(prev.theta + dtheta)
        deltas.append(OdometryDelta(d * math.cos(heading - prev.theta),
                                    d * math.sin(heading - prev.theta), dtheta))
    return deltas


def compose_odometry(start: Pose2, deltas: list[OdometryDelta]) -> list[Pose2]:
    """Dead-reckon a pose sequence through the particle motion model."""
    poses = [start]
    for u in deltas:
        prev = poses[-1]
        theta = wrap_angle(prev.theta + u.dtheta)
        d = u.distance
        poses.append(Pose2(prev.x + d * math.cos(theta),
                           prev.y + d * math.sin(theta), theta))
    return poses


def make_trajectory(truth: list[Pose2], noise=(0.0, 0.0), seed: int = 0) -> SimTrajectory:
    deltas = simulate_odometry(truth, noise, seed)
    return SimTrajectory(truth, deltas, compose_odometry(truth[0], deltas))
