import math

import numpy as np
import pytest

from lockit.cloud import PointCloud, PreprocessConfig, estimate_normals
from lockit.errors import (DegenerateGeometry, DimensionMismatch, EmptyCloud,
                           NoConsensus, TooFewCorrespondences)
from lockit.features import LOCAL_DIM, FeatureBackend, LocalFeatureCloud, SyntheticBackend
from lockit.geometry import Pose2, RigidTransform3
from lockit.registration import (Correspondence, MapRegistrationCache,
                                 fine_localize_dlf, fine_localize_icp,
                                 icp_point_to_plane, match_features, ransac_register,
                                 solve_rigid_svd)
from lockit.topomap import MapNode, TopoMap
from lockit.features import GlobalDescriptor

REG_CFG = PreprocessConfig(max_range_m=30.0, voxel_size_m=0.25)


def transform_errors(got: RigidTransform3, true: RigidTransform3):
    """(translation error m, rotation error deg) between two transforms."""
    delta = got.compose(true.inverse())
    t_err = float(np.linalg.norm(delta.translation))
    cos = (np.trace(delta.rotation) - 1.0) / 2.0
    r_err = math.degrees(math.acos(min(1.0, max(-1.0, cos))))
    return t_err, r_err


def check_rotation_valid(t: RigidTransform3):
    np.testing.assert_allclose(t.rotation.T @ t.rotation, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(t.rotation) - 1.0) < 1e-9


class TestSolveRigidSvd:
    def test_exact_recovery(self):
        rng = np.random.default_rng(0)
        src = rng.normal(size=(30, 3))
        true = RigidTransform3.from_yaw_xyz(1.1, 0.5, -0.2, 0.3)
        got = solve_rigid_svd(src, true.apply(src))
        t_err, r_err = transform_errors(got, true)
        assert t_err < 1e-9 and r_err < 1e-4   # acos loses precision near 0 deg
        check_rotation_valid(got)

    def test_reflection_corrected(self):
        # near-planar points tempt the SVD into a reflection; det must stay +1
        rng = np.random.default_rng(1)
        src = rng.normal(size=(10, 3)) * [1.0, 1.0, 1e-9]
        true = RigidTransform3.from_yaw_xyz(0.3, 1.0, 2.0, 0.0)
        got = solve_rigid_svd(src, true.apply(src))
        check_rotation_valid(got)


@pytest.fixture(scope="module")
def scene_normals(structured_scene):
    return estimate_normals(structured_scene, 20)


@pytest.fixture(scope="module")
def node_map(structured_scene):
    backend = SyntheticBackend()
    desc = GlobalDescriptor(np.zeros(4))
    node = MapNode(0, (0.0, 0.0), "000000", desc, yaw_at_capture=0.0)
    topo = TopoMap([node], 1.0, cloud_store={"000000": structured_scene})
    return topo, backend


class TestIcp:
    def test_self_alignment(self, structured_scene, scene_normals):
        res = icp_point_to_plane(structured_scene, scene_normals,
                                 RigidTransform3.identity())
        assert res.final_cost < 1e-12
        t_err, r_err = transform_errors(res.transform, RigidTransform3.identity())
        assert t_err < 1e-9 and r_err < 1e-7

    def test_small_offset_recovery(self, structured_scene, scene_normals):
        true = RigidTransform3.from_yaw_xyz(math.radians(5.0), 0.3, -0.1, 0.0)
        source = PointCloud(true.inverse().apply(structured_scene.points))
        res = icp_point_to_plane(source, scene_normals, RigidTransform3.identity())
        t_err, r_err = transform_errors(res.transform, true)
        assert t_err < 0.05 and r_err < 0.5
        check_rotation_valid(res.transform)

    def test_large_misalignment_fails(self, structured_scene, scene_normals):
        true = RigidTransform3.from_yaw_xyz(math.pi, 0.2, 0.1, 0.0)
        source = PointCloud(true.inverse().apply(structured_scene.points))
        res = icp_point_to_plane(source, scene_normals, RigidTransform3.identity())
        t_err, r_err = transform_errors(res.transform, true)
        assert (not res.converged) or t_err > 1.0 or r_err > 20.0

    def test_cost_monotone(self, structured_scene, scene_normals):
        true = RigidTransform3.from_yaw_xyz(math.radians(8.0), 0.4, 0.2, 0.0)
        source = PointCloud(true.inverse().apply(structured_scene.points))
        res = icp_point_to_plane(source, scene_normals, RigidTransform3.identity())
        hist = res.cost_history
        assert all(b <= a + 1e-15 for a, b in zip(hist, hist[1:]))

    def test_single_plane_degenerate(self):
        xs = np.arange(-3, 3, 0.2)
        gx, gy = np.meshgrid(xs, xs)
        plane = PointCloud(np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1))
        normals = estimate_normals(plane, 10)
        with pytest.raises(DegenerateGeometry):
            icp_point_to_plane(plane, normals, RigidTransform3.identity())

    def test_empty_inputs(self, scene_normals):
        with pytest.raises(EmptyCloud):
            icp_point_to_plane(PointCloud.empty(), scene_normals,
                               RigidTransform3.identity())


class TestMatchFeatures:
    def make_features(self, n=40, dim=6, seed=0):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(n, 3))
        feats = rng.normal(size=(n, dim)) * 10
        return LocalFeatureCloud(pts, feats)

    def test_identity_matching(self):
        f = self.make_features()
        corrs = match_features(f, f)
        assert len(corrs) == len(f)
        assert all(c.source_index == c.target_index for c in corrs)
        assert all(c.feature_distance == 0.0 for c in corrs)

    def test_sorted_by_distance(self):
        f = self.make_features(seed=1)
        q = self.make_features(seed=2)
        corrs = match_features(f, q, mutual=False)
        dists = [c.feature_distance for c in corrs]
        assert dists == sorted(dists)

    def test_mutual_filter_on_distractors(self):
        rng = np.random.default_rng(3)
        base = self.make_features(n=50, seed=4)
        noise = rng.normal(scale=0.01, size=base.features.shape)
        # 30% distractors appended to the target side only
        distract = rng.normal(size=(15, base.dim)) * 10
        q = LocalFeatureCloud(np.vstack([base.points, rng.normal(size=(15, 3))]),
                              np.vstack([base.features + noise, distract]))
        corrs = match_features(base, q, mutual=True)
        correct = sum(1 for c in corrs if c.source_index == c.target_index)
        assert correct / len(corrs) >= 0.9

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            match_features(self.make_features(dim=6), self.make_features(dim=7))


class TestRansac:
    def make_problem(self, n=60, outlier_frac=0.0, yaw=2.5, seed=0):
        rng = np.random.default_rng(seed)
        src = rng.uniform(-5, 5, size=(n, 3))
        true = RigidTransform3.from_yaw_xyz(yaw, 0.8, -0.4, 0.1)
        dst = true.apply(src)
        n_out = int(outlier_frac * n)
        if n_out:
            dst[rng.choice(n, size=n_out, replace=False)] += rng.uniform(
                2.0, 8.0, size=(n_out, 3))
        corrs = [Correspondence(i, i, 0.0) for i in range(n)]
        return PointCloud(src), PointCloud(dst), corrs, true

    def test_noiseless_recovery(self):
        src, dst, corrs, true = self.make_problem()
        res = ransac_register(src, dst, corrs, seed=1)
        t_err, r_err = transform_errors(res.transform, true)
        assert t_err < 1e-6 and r_err < 1e-4
        assert res.inlier_count == len(corrs)

    def test_outlier_robust_large_yaw(self):
        src, dst, corrs, true = self.make_problem(outlier_frac=0.3, yaw=math.pi)
        res = ransac_register(src, dst, corrs, seed=2)
        t_err, r_err = transform_errors(res.transform, true)
        assert t_err < 0.1 and r_err < 1.0

    def test_deterministic_under_seed(self):
        src, dst, corrs, _ = self.make_problem(outlier_frac=0.2, seed=3)
        a = ransac_register(src, dst, corrs, seed=7)
        b = ransac_register(src, dst, corrs, seed=7)
        np.testing.assert_array_equal(a.transform.matrix(), b.transform.matrix())
        assert a.inlier_count == b.inlier_count

    def test_too_few_correspondences(self):
        src, dst, corrs, _ = self.make_problem()
        with pytest.raises(TooFewCorrespondences):
            ransac_register(src, dst, corrs[:2])

    def test_collinear_sources_no_consensus(self):
        # every 3-sample is rank deficient, so no model is ever fit
        src = PointCloud(np.stack([np.arange(10.0), np.zeros(10), np.zeros(10)], axis=1))
        dst = PointCloud(np.random.default_rng(0).normal(size=(10, 3)))
        corrs = [Correspondence(i, i, 0.0) for i in range(10)]
        with pytest.raises(NoConsensus):
            ransac_register(src, dst, corrs, max_trials=50)


class _TinyBackend(FeatureBackend):
    """Returns two-point feature clouds so matching always starves."""

    name = "tiny"

    def local_features(self, cloud, scan_id=None):
        return LocalFeatureCloud(cloud.points[:2], np.zeros((2, LOCAL_DIM)))


class TestFineLocalization:
    def test_icp_refines_perturbed_pose(self, node_map, structured_scene):
        topo, backend = node_map
        cache = MapRegistrationCache(topo, REG_CFG, backend)
        true = Pose2(0.3, -0.2, math.radians(4.0))
        moved = RigidTransform3.from_pose2(true)
        query = PointCloud(moved.inverse().apply(structured_scene.points))
        coarse = Pose2(0.0, 0.1, 0.0)
        prev = Pose2(-1.0, 0.1 - math.tan(math.radians(4.0)), 0.0)
        fine = fine_localize_icp(query, topo, coarse, prev, cache)
        assert math.hypot(fine.pose.x - true.x, fine.pose.y - true.y) < 0.1
        check_rotation_valid(fine.transform)

    def test_icp_coincident_poses_fall_back(self, node_map, structured_scene):
        topo, backend = node_map
        cache = MapRegistrationCache(topo, REG_CFG, backend)
        coarse = Pose2(0.05, 0.0, 0.0)
        fine = fine_localize_icp(structured_scene, topo, coarse, coarse, cache)
        assert fine.fell_back

    def test_dlf_recovers_large_yaw_without_seed(self, node_map, structured_scene):
        topo, backend = node_map
        cache = MapRegistrationCache(topo, REG_CFG, backend)
        true = Pose2(0.5, 0.2, math.radians(120.0))
        moved = RigidTransform3.from_pose2(true)
        query = PointCloud(moved.inverse().apply(structured_scene.points))
        fine = fine_localize_dlf(query, topo, Pose2(0.0, 0.0, 0.0), backend, cache)
        assert not fine.fell_back
        assert math.hypot(fine.pose.x - true.x, fine.pose.y - true.y) < 0.1
        assert abs(math.degrees(fine.pose.theta - true.theta)) < 1.0

    def test_dlf_seed_independent_of_coarse_heading(self, node_map, structured_scene):
        topo, backend = node_map
        true = Pose2(0.3, -0.1, math.radians(40.0))
        moved = RigidTransform3.from_pose2(true)
        query = PointCloud(moved.inverse().apply(structured_scene.points))
        results = []
        for theta in (0.0, 2.5):
            cache = MapRegistrationCache(topo, REG_CFG, backend)
            fine = fine_localize_dlf(query, topo, Pose2(0.0, 0.0, theta),
                                     backend, cache)
            results.append(fine.transform.matrix())
        np.testing.assert_array_equal(results[0], results[1])

    def test_dlf_falls_back_on_starved_matching(self, node_map, structured_scene):
        topo, _ = node_map
        backend = _TinyBackend()
        cache = MapRegistrationCache(topo, REG_CFG, backend)
        coarse = Pose2(0.1, 0.2, 0.3)
        fine = fine_localize_dlf(structured_scene, topo, coarse, backend, cache)
        assert fine.fell_back
        assert fine.pose == coarse
