"""Point-cloud containers and the deterministic preprocessing pipeline.

Two pipelines are provided: one for descriptor extraction (range crop,
normalization into [-1, 1]^3, voxel downsampling, ground removal) and one
for registration, which skips the scaling step so metric distances survive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCloud

_VERTICAL_CONE_COS = np.cos(np.deg2rad(30.0))


class PointCloud:
    """Immutable 3D point cloud with optional per-point intensity."""

    __slots__ = ("points", "intensity")

    def __init__(self, points, intensity=None):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if points.size and not np.all(np.isfinite(points)):
            raise ValueError("point coordinates must be finite")
        self.points = points
        self.points.setflags(write=False)
        if intensity is not None:
            intensity = np.asarray(intensity, dtype=np.float64).reshape(-1)
            if intensity.shape[0] != points.shape[0]:
                raise ValueError("intensity length must match point count")
            intensity.setflags(write=False)
        self.intensity = intensity

    def __len__(self):
        return self.points.shape[0]

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.empty((0, 3)))

    def _select(self, mask_or_idx) -> "PointCloud":
        inten = self.intensity[mask_or_idx] if self.intensity is not None else None
        return PointCloud(self.points[mask_or_idx], inten)


class NormalCloud:
    """A point cloud paired with unit surface normals, one per point."""

    __slots__ = ("base", "normals")

    def __init__(self, base: PointCloud, normals):
        normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        if normals.shape[0] != len(base):
            raise ValueError("one normal per point required")
        norms = np.linalg.norm(normals, axis=1)
        if normals.size and not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("normals must be unit length")
        self.base = base
        self.normals = normals
        self.normals.setflags(write=False)

    def __len__(self):
        return len(self.base)


@dataclass(frozen=True)
class PreprocessConfig:
    """Tuning constants of the preprocessing pipelines."""

    max_range_m: float = 50.0
    scale_factor: float = 50.0
    voxel_size_m: float = 0.3
    ground_distance_m: float = 0.2
    normalize: bool = True
    ground_seed: int = 0

    def __post_init__(self):
        if self.max_range_m <= 0:
            raise ValueError("max_range_m must be positive")
        if self.scale_factor <= 0:
            raise ValueError("scale_factor must be positive")
        if self.voxel_size_m <= 0:
            raise ValueError("voxel_size_m must be positive")
        if self.ground_distance_m < 0:
            raise ValueError("ground_distance_m must be non-negative")


def crop_range(cloud: PointCloud, max_range_m: float) -> PointCloud:
    """Keep points within max_range_m of the sensor origin, order preserved."""
    if max_range_m <= 0:
        raise ValueError("max_range_m must be positive")
    if len(cloud) == 0:
        return cloud
    r = np.linalg.norm(cloud.points, axis=1)
    return cloud._select(r <= max_range_m)


def center_and_scale(cloud: PointCloud, scale_factor: float) -> PointCloud:
    """Divide coordinates by scale_factor. Clouds are sensor-origin centered
    already, so no mean subtraction takes place."""
    if scale_factor <= 0:
        raise ValueError("scale_factor must be positive")
    return PointCloud(cloud.points / scale_factor, cloud.intensity)


def voxel_downsample(cloud: PointCloud, voxel_size_m: float) -> PointCloud:
    """Replace the points of each occupied voxel by their centroid.

    The grid is axis aligned and anchored at the origin. Output order follows
    the first appearance of each voxel in the input.
    """
    if voxel_size_m <= 0:
        raise ValueError("voxel_size_m must be positive")
    if len(cloud) == 0:
        return cloud
    idx = np.floor(cloud.points / voxel_size_m).astype(np.int64)
    _, first, inverse = np.unique(idx, axis=0, return_index=True, return_inverse=True)
    # stable output order: sort voxel groups by first occurrence
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    groups = rank[inverse]
    n_vox = first.size
    sums = np.zeros((n_vox, 3))
    counts = np.zeros(n_vox)
    np.add.at(sums, groups, cloud.points)
    np.add.at(counts, groups, 1.0)
    return PointCloud(sums / counts[:, None])


def _fit_plane(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray):
    """Plane through three points as (unit normal, offset d) with n.p + d = 0."""
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    return n, -float(n @ p0)


def remove_ground(cloud: PointCloud, ground_distance_m: float, rng_seed: int = 0,
                  n_trials: int = 200) -> PointCloud:
    """Drop points on the dominant near-horizontal plane.

    Plane hypotheses come from seeded random 3-point samples; only planes whose
    normal lies within 30 degrees of vertical compete. If no such plane gathers
    a minimal consensus the cloud is returned unchanged.
    """
    if len(cloud) < 3:
        raise DegenerateCloud("ground removal needs at least 3 points")
    if ground_distance_m < 0:
        raise ValueError("ground_distance_m must be non-negative")
    pts = cloud.points
    n_pts = len(cloud)
    rng = np.random.default_rng(rng_seed)
    best_inliers = 0
    best_mask = None
    for _ in range(n_trials):
        i, j, k = rng.choice(n_pts, size=3, replace=False)
        plane = _fit_plane(pts[i], pts[j], pts[k])
        if plane is None:
            continue
        n, d = plane
        if abs(n[2]) < _VERTICAL_CONE_COS:
            continue
        dist = np.abs(pts @ n + d)
        mask = dist <= ground_distance_m
        count = int(mask.sum())
        if count > best_inliers:
            best_inliers = count
            best_mask = mask
    # require the plane to dominate: at least 10% of the cloud and >= 20 points
    if best_mask is None or best_inliers < max(20, 0.1 * n_pts):
        return cloud
    return cloud._select(~best_mask)


def estimate_normals(cloud: PointCloud, k_neighbors: int = 20) -> NormalCloud:
    """PCA normals from the k nearest neighbors, oriented toward the origin."""
    if k_neighbors < 3:
        raise DegenerateCloud("k_neighbors must be at least 3")
    if len(cloud) < k_neighbors:
        raise DegenerateCloud("cloud smaller than k_neighbors")
    pts = cloud.points
    tree = cKDTree(pts)
    _, nbr = tree.query(pts, k=k_neighbors)
    nbh = pts[nbr]                       # (n, k, 3)
    centered = nbh - nbh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k_neighbors
    _, vecs = np.linalg.eigh(cov)        # ascending eigenvalues
    normals = vecs[:, :, 0]
    # flip toward the sensor origin: n . (origin - p) >= 0
    flip = np.einsum("ni,ni->n", normals, pts) > 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return NormalCloud(cloud, normals)


def preprocess_for_descriptor(cloud: PointCloud, cfg: PreprocessConfig) -> PointCloud:
    """Full descriptor-path pipeline: crop, scale into [-1,1]^3, voxelize,
    remove ground. Metric thresholds are rescaled to the normalized frame."""
    out = crop_range(cloud, cfg.max_range_m)
    scale = cfg.scale_factor if cfg.normalize else 1.0
    if cfg.normalize:
        out = center_and_scale(out, cfg.scale_factor)
    if len(out):
        out = voxel_downsample(out, cfg.voxel_size_m / scale)
    if len(out) >= 3:
        out = remove_ground(out, cfg.ground_distance_m / scale, cfg.ground_seed)
    return out


def preprocess_for_registration(cloud: PointCloud, cfg: PreprocessConfig) -> PointCloud:
    """Registration-path pipeline: same stages without the scaling step, so
    pairwise metric distances are preserved."""
    out = crop_range(cloud, cfg.max_range_m)
    if len(out):
        out = voxel_downsample(out, cfg.voxel_size_m)
    if len(out) >= 3:
        out = remove_ground(out, cfg.ground_distance_m, cfg.ground_seed)
    return out
