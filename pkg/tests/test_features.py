import numpy as np
import pytest

from keypose.features import FeatureCloud, compute_fpfh, match_features
from keypose.geometry import PointCloud, RigidTransform, apply_transform, diameter, random_rotation
from keypose.sampling import poisson_sample
from keypose.meshes import sphere

from conftest import random_cloud, random_unit_vectors


def plane_grid(n_side=20, spacing=0.01):
    xs = np.arange(n_side) * spacing
    gx, gy = np.meshgrid(xs, xs)
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(n_side * n_side)])
    normals = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
    return PointCloud(pts, normals)


class TestComputeFpfh:
    def test_blocks_sum_to_100(self, cube_model):
        fc = compute_fpfh(cube_model.cloud)
        blocks = fc.descriptors.reshape(-1, 3, 11).sum(axis=2)
        np.testing.assert_allclose(blocks, 100.0, atol=1e-6)

    def test_plane_concentrates_central_bins(self):
        # Darboux oracle on a plane with uniform +z normals: alpha = v.n_t = 0
        # (v is perpendicular to n) and theta = atan2(w.n_t, u.n_t) = atan2(0,1) = 0,
        # so both land in the center bin (index 5 of 11).
        cloud = plane_grid()
        fc = compute_fpfh(cloud, radius=0.035)
        interior = np.all((cloud.points[:, :2] > 0.04) & (cloud.points[:, :2] < 0.15), axis=1)
        alpha_block = fc.descriptors[interior, 0:11]
        theta_block = fc.descriptors[interior, 22:33]
        assert np.all(alpha_block[:, 5] > 99.0)
        assert np.all(theta_block[:, 5] > 99.0)

    def test_rigid_invariance_with_carried_normals(self):
        rng = np.random.default_rng(40)
        cloud = PointCloud(random_cloud(rng, 300, scale=0.5), random_unit_vectors(rng, 300))
        fc = compute_fpfh(cloud, radius=0.3)
        t = RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3))
        fc_t = compute_fpfh(apply_transform(t, cloud), radius=0.3)
        assert np.max(np.abs(fc.descriptors - fc_t.descriptors)) < 1e-6

    def test_rigid_invariance_with_reestimated_normals(self):
        # looser bound: normal re-estimation (centroid-oriented) is only
        # equivariant up to estimation noise, so bins may shift slightly
        from keypose.spatial import estimate_normals
        rng = np.random.default_rng(46)
        pts = random_cloud(rng, 400, scale=0.5)
        t = RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3))
        a = estimate_normals(PointCloud(pts), k=12, orient="centroid")
        b = estimate_normals(PointCloud(t.apply_points(pts)), k=12, orient="centroid")
        fa = compute_fpfh(a, radius=0.3)
        fb = compute_fpfh(b, radius=0.3)
        assert np.max(np.abs(fa.descriptors - fb.descriptors)) <= 0.5

    def test_sphere_vs_plane_distinguishable(self):
        plane = compute_fpfh(plane_grid(), radius=0.035)
        ball = poisson_sample(sphere(radius=0.05), 400, seed=1)
        ball_fc = compute_fpfh(ball, radius=0.035)
        plane_interior = np.all(
            (plane.cloud.points[:, :2] > 0.04) & (plane.cloud.points[:, :2] < 0.15), axis=1)
        mean_plane = plane.descriptors[plane_interior].mean(axis=0)
        mean_ball = ball_fc.descriptors.mean(axis=0)
        assert np.abs(mean_plane - mean_ball).sum() > 5.0

    def test_no_neighbors_flagged_zero(self):
        pts = np.array([[0.0, 0, 0], [10.0, 0, 0], [0, 10.0, 0], [0, 0, 10.0]])
        cloud = PointCloud(pts, np.tile([0.0, 0, 1], (4, 1)))
        with pytest.warns(UserWarning, match="no neighbors"):
            fc = compute_fpfh(cloud, radius=0.1)
        np.testing.assert_array_equal(fc.descriptors, np.zeros((4, 33)))

    def test_requires_normals(self):
        with pytest.raises(ValueError, match="normals"):
            compute_fpfh(PointCloud(np.eye(3)))

    def test_descriptor_shape_validation(self, cube_model):
        with pytest.raises(ValueError):
            FeatureCloud(cube_model.cloud, np.zeros((3, 33)))

    def test_csv_export(self, tmp_path):
        cloud = plane_grid(n_side=5)
        fc = compute_fpfh(cloud, radius=0.05)
        out = tmp_path / "desc.csv"
        fc.to_csv(out)
        lines = out.read_text().splitlines()
        assert len(lines) == len(cloud) + 1
        assert lines[0].count(",") == 32


class TestMatchFeatures:
    def test_self_match_is_identity(self):
        rng = np.random.default_rng(41)
        cloud = PointCloud(random_cloud(rng, 200, scale=0.5), random_unit_vectors(rng, 200))
        fc = compute_fpfh(cloud, radius=0.4)
        corr = match_features(fc, fc)
        # descriptors are unique on a random cloud, so i <-> i survives
        np.testing.assert_array_equal(corr.scene_indices, corr.keypoint_indices)
        assert len(corr) == 200

    def test_transformed_copy_matches_correctly(self, bracket_model):
        rng = np.random.default_rng(42)
        obj = bracket_model.cloud
        t = RigidTransform(random_rotation(rng), rng.uniform(-0.1, 0.1, 3))
        scene = apply_transform(t, obj)
        radius = None
        obj_fc = compute_fpfh(obj, radius)
        scene_fc = compute_fpfh(scene, radius)
        corr = match_features(scene_fc, obj_fc)
        src = obj.points[corr.keypoint_indices]
        dst = scene.points[corr.scene_indices]
        d = np.linalg.norm(t.apply_points(src) - dst, axis=1)
        dia = diameter(obj)
        assert np.mean(d <= 0.05 * dia) >= 0.8

    def test_random_noise_scene_mutual_filter(self, cube_model):
        rng = np.random.default_rng(43)
        pts = random_cloud(rng, 2048, scale=0.1)
        noise_cloud = PointCloud(pts, random_unit_vectors(rng, 2048))
        scene_fc = compute_fpfh(noise_cloud, radius=0.02)
        obj_fc = compute_fpfh(cube_model.cloud)
        corr = match_features(scene_fc, obj_fc)
        assert len(corr) < 0.2 * 2048

    def test_symmetric_under_swap(self):
        rng = np.random.default_rng(44)
        a = PointCloud(random_cloud(rng, 150, scale=0.5), random_unit_vectors(rng, 150))
        b = PointCloud(random_cloud(rng, 170, scale=0.5), random_unit_vectors(rng, 170))
        fa = compute_fpfh(a, radius=0.4)
        fb = compute_fpfh(b, radius=0.4)
        ab = {(s, k) for s, k in match_features(fa, fb).pairs()}
        ba = {(k, s) for s, k in match_features(fb, fa).pairs()}
        assert ab == ba

    def test_mutual_off_keeps_all(self):
        rng = np.random.default_rng(45)
        a = PointCloud(random_cloud(rng, 100, scale=0.5), random_unit_vectors(rng, 100))
        fa = compute_fpfh(a, radius=0.4)
        corr = match_features(fa, fa, mutual=False)
        assert len(corr) == 100
