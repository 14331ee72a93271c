"""Fine localization by pairwise registration.

Two routes are provided. Point-to-plane ICP needs a seed transform (built
from the coarse pose and a trigonometric yaw estimate) and minimizes the
projection of point-pair residuals onto target normals. The deep-local-
feature route matches per-point features across the two scans and estimates
the transform with RANSAC over 3-point correspondence samples, needing no
seed; an optional ICP polish refines its output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.neighbors import NearestNeighbors

from .cloud import (NormalCloud, PointCloud, PreprocessConfig, estimate_normals,
                    preprocess_for_registration)
from .errors import (BackendUnavailable, DegenerateGeometry, DimensionMismatch,
                     EmptyCloud, EmptyCorrespondences, NoConsensus,
                     TooFewCorrespondences)
from .features import FeatureBackend, LocalFeatureCloud
from .geometry import Pose2, RigidTransform3, yaw_from_consecutive
from .topomap import MapNode, TopoMap


@dataclass
class Correspondence:
    source_index: int
    target_index: int
    feature_distance: float


@dataclass
class RegistrationResult:
    transform: RigidTransform3
    final_cost: float          # summed squared point-to-plane residual, m^2
    inlier_count: int
    iterations: int
    converged: bool
    cost_history: list = field(default_factory=list)  # mean residual^2 per accepted iteration


def _rodrigues(omega: np.ndarray) -> np.ndarray:
    """Rotation matrix for a small axis-angle vector."""
    angle = np.linalg.norm(omega)
    if angle < 1e-12:
        return np.eye(3)
    axis = omega / angle
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def solve_rigid_svd(source: np.ndarray, target: np.ndarray) -> RigidTransform3:
    """Closed-form least-squares rigid transform mapping source onto target
    (SVD of the cross-covariance, reflection corrected)."""
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    cs = source.mean(axis=0)
    ct = target.mean(axis=0)
    h = (source - cs).T @ (target - ct)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform3(rot, ct - rot @ cs)


def icp_point_to_plane(source: PointCloud, target: NormalCloud,
                       seed: RigidTransform3, max_iters: int = 50,
                       corr_dist_m: float = 1.0, tol: float = 1e-6) -> RegistrationResult:
    """Iteratively align source onto target by minimizing the squared
    point-to-plane residual sum over gated nearest-neighbor correspondences.

    Updates that raise the mean residual are rejected and iteration stops, so
    the recorded cost history is non-increasing.
    """
    if len(source) == 0 or len(target) == 0:
        raise EmptyCloud("ICP needs non-empty clouds")
    tgt_pts = target.base.points
    tgt_nrm = target.normals
    tree = cKDTree(tgt_pts)
    transform = seed
    src = source.points

    def correspondences_and_cost(t: RigidTransform3):
        moved = t.apply(src)
        dist, idx = tree.query(moved, distance_upper_bound=corr_dist_m)
        mask = np.isfinite(dist)
        if not mask.any():
            return None
        moved = moved[mask]
        p = tgt_pts[idx[mask]]
        n = tgt_nrm[idx[mask]]
        resid = np.einsum("ij,ij->i", p - moved, n)
        return moved, p, n, resid, float(np.mean(resid ** 2))

    state = correspondences_and_cost(transform)
    if state is None:
        raise EmptyCorrespondences("no correspondences within the gate at the seed")
    cost_history = [state[4]]
    converged = False
    iterations = 0
    for _ in range(max_iters):
        moved, p, n, resid, cost = state
        # jacobian rows: [ (q x n)^T, n^T ] for the update q + w x q + t
        jac = np.hstack([np.cross(moved, n), n])
        jtj = jac.T @ jac
        if np.linalg.cond(jtj) > 1e12:
            raise DegenerateGeometry("normal system is rank deficient")
        x = np.linalg.solve(jtj, jac.T @ resid)
        delta = RigidTransform3(_rodrigues(x[:3]), x[3:])
        candidate = delta.compose(transform)
        new_state = correspondences_and_cost(candidate)
        if new_state is None:
            converged = True
            break
        new_cost = new_state[4]
        if new_cost > cost:
            converged = True
            break
        transform = candidate
        state = new_state
        iterations += 1
        cost_history.append(new_cost)
        if cost - new_cost < tol:
            converged = True
            break
    final_mean = cost_history[-1]
    n_corr = state[0].shape[0]
    return RegistrationResult(transform, final_mean * n_corr, n_corr,
                              iterations, converged, cost_history)


def match_features(f: LocalFeatureCloud, q: LocalFeatureCloud,
                   ratio: float = 1.0, mutual: bool = True) -> list[Correspondence]:
    """Nearest-neighbor matches from f's features into q's, optionally kept
    only when reciprocal and/or passing a best/second-best ratio test.
    Output is sorted by ascending feature distance."""
    if len(f) == 0 or len(q) == 0:
        raise EmptyCloud("cannot match empty feature clouds")
    if f.dim != q.dim:
        raise DimensionMismatch(f"feature dims differ: {f.dim} vs {q.dim}")
    k = 2 if (ratio < 1.0 and len(q) > 1) else 1
    nn = NearestNeighbors(n_neighbors=k, algorithm="brute").fit(q.features)
    dist, idx = nn.kneighbors(f.features)
    keep = np.ones(len(f), dtype=bool)
    if k == 2:
        keep &= dist[:, 0] <= ratio * np.maximum(dist[:, 1], 1e-300)
    if mutual:
        back = NearestNeighbors(n_neighbors=1, algorithm="brute").fit(f.features)
        _, bidx = back.kneighbors(q.features)
        keep &= bidx[idx[:, 0], 0] == np.arange(len(f))
    corrs = [Correspondence(int(i), int(idx[i, 0]), float(dist[i, 0]))
             for i in np.flatnonzero(keep)]
    corrs.sort(key=lambda c: c.feature_distance)
    return corrs


def ransac_register(f_cloud: PointCloud, q_cloud: PointCloud,
                    corrs: list[Correspondence], inlier_dist_m: float = 0.3,
                    max_trials: int = 10000, seed: int = 0,
                    confidence: float = 0.999) -> RegistrationResult:
    """Robust rigid transform from correspondences: repeated 3-sample
    closed-form fits, inlier counting, then a refit on the best inlier set.
    The transform maps f_cloud points onto q_cloud points."""
    if len(corrs) < 3:
        raise TooFewCorrespondences(f"need at least 3 correspondences, got {len(corrs)}")
    src = f_cloud.points[[c.source_index for c in corrs]]
    dst = q_cloud.points[[c.target_index for c in corrs]]
    n = len(corrs)
    rng = np.random.default_rng(seed)
    best_count = 0
    best_mask = None
    best_model = None
    trials_needed = max_trials
    trial = 0
    while trial < min(max_trials, trials_needed):
        trial += 1
        pick = rng.choice(n, size=3, replace=False)
        if np.linalg.matrix_rank(src[pick] - src[pick].mean(axis=0)) < 2:
            continue
        model = solve_rigid_svd(src[pick], dst[pick])
        err = np.linalg.norm(model.apply(src) - dst, axis=1)
        mask = err <= inlier_dist_m
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            best_model = model
            w = count / n
            if w > 0:
                denom = math.log(max(1.0 - w ** 3, 1e-12))
                trials_needed = min(max_trials, int(math.ceil(math.log(1.0 - confidence) / denom)))
    if best_count < 3:
        raise NoConsensus(f"best model had {best_count} inliers")
    refit = solve_rigid_svd(src[best_mask], dst[best_mask])
    refit_err = np.linalg.norm(refit.apply(src) - dst, axis=1)
    refit_count = int(np.sum(refit_err <= inlier_dist_m))
    if refit_count < best_count:
        # refitting lost consensus; keep the sampled model
        refit = best_model
        refit_count = best_count
    resid = refit.apply(src[best_mask]) - dst[best_mask]
    cost = float(np.sum(resid ** 2))
    return RegistrationResult(refit, cost, refit_count, trial, True)


# ---------------------------------------------------------------------------
# fine localization against the map


class MapRegistrationCache:
    """Per-node registration data computed lazily and reused across queries."""

    def __init__(self, topo: TopoMap, cfg: PreprocessConfig,
                 backend: FeatureBackend | None = None):
        self.topo = topo
        self.cfg = cfg
        self.backend = backend
        self._reg_clouds: dict[int, PointCloud] = {}
        self._normals: dict[int, NormalCloud] = {}
        self._features: dict[int, LocalFeatureCloud] = {}

    def reg_cloud(self, node: MapNode) -> PointCloud:
        if node.id not in self._reg_clouds:
            self._reg_clouds[node.id] = preprocess_for_registration(
                self.topo.get_cloud(node), self.cfg)
        return self._reg_clouds[node.id]

    def normals(self, node: MapNode) -> NormalCloud:
        if node.id not in self._normals:
            self._normals[node.id] = estimate_normals(self.reg_cloud(node))
        return self._normals[node.id]

    def features(self, node: MapNode) -> LocalFeatureCloud:
        if node.id not in self._features:
            if self.backend is None:
                raise BackendUnavailable("no local-feature backend configured")
            self._features[node.id] = self.backend.local_features(
                self.reg_cloud(node), scan_id=node.cloud_ref)
        return self._features[node.id]


@dataclass
class FineResult:
    transform: RigidTransform3      # full 6-DoF pose of the query in the map frame
    pose: Pose2                     # planar projection of the transform
    report: RegistrationResult | None
    node_id: int
    fell_back: bool = False


def _node_transform(node: MapNode) -> RigidTransform3:
    return RigidTransform3.from_yaw_xyz(node.yaw_at_capture or 0.0,
                                        node.position[0], node.position[1], 0.0)


def fine_localize_icp(query: PointCloud, topo: TopoMap, coarse: Pose2,
                      prev_coarse: Pose2, cache: MapRegistrationCache,
                      max_iters: int = 50, corr_dist_m: float = 1.0,
                      tol: float = 1e-6) -> FineResult:
    """ICP refinement of the coarse pose against the nearest map node.

    The seed assumes the robot is level (z = roll = pitch = 0); its yaw is
    the travel heading implied by the two consecutive coarse estimates,
    falling back to the coarse heading when they coincide.
    """
    node = topo.nearest_node(coarse.x, coarse.y)
    fell_back = False
    try:
        yaw = yaw_from_consecutive(prev_coarse, coarse)
    except Exception:
        yaw = coarse.theta
        fell_back = True
    t_node = _node_transform(node)
    t_seed = t_node.inverse().compose(RigidTransform3.from_yaw_xyz(yaw, coarse.x, coarse.y))
    query_reg = preprocess_for_registration(query, cache.cfg)
    result = icp_point_to_plane(query_reg, cache.normals(node), t_seed,
                                max_iters=max_iters, corr_dist_m=corr_dist_m, tol=tol)
    t_global = t_node.compose(result.transform)
    return FineResult(t_global, t_global.to_pose2(), result, node.id, fell_back)


def fine_localize_dlf(query: PointCloud, topo: TopoMap, coarse: Pose2,
                      backend: FeatureBackend, cache: MapRegistrationCache,
                      scan_id: str | None = None, inlier_dist_m: float = 0.3,
                      max_trials: int = 10000, seed: int = 0,
                      polish: bool = True, mutual: bool = True,
                      ratio: float = 1.0) -> FineResult:
    """Seed-free refinement: local-feature matching plus RANSAC against the
    nearest map node, optionally polished with point-to-plane ICP. On lost
    consensus the coarse pose is returned flagged."""
    node = topo.nearest_node(coarse.x, coarse.y)
    t_node = _node_transform(node)
    query_reg = preprocess_for_registration(query, cache.cfg)
    query_feats = backend.local_features(query_reg, scan_id=scan_id)
    node_feats = cache.features(node)
    try:
        corrs = match_features(query_feats, node_feats, ratio=ratio, mutual=mutual)
        result = ransac_register(
            PointCloud(query_feats.points), PointCloud(node_feats.points), corrs,
            inlier_dist_m=inlier_dist_m, max_trials=max_trials, seed=seed)
    except (NoConsensus, TooFewCorrespondences):
        t_coarse = RigidTransform3.from_pose2(coarse)
        return FineResult(t_coarse, coarse, None, node.id, fell_back=True)
    if polish:
        try:
            polished = icp_point_to_plane(query_reg, cache.normals(node),
                                          result.transform)
            result = polished
        except (EmptyCorrespondences, DegenerateGeometry):
            pass
    t_global = t_node.compose(result.transform)
    return FineResult(t_global, t_global.to_pose2(), result, node.id)
