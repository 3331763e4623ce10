import numpy as np
import pytest

from keypose.geometry import DegenerateInputError, PointCloud, RigidTransform, random_rotation
from keypose.spatial import SpatialIndex, align_normal_signs, estimate_normals, mean_nn_spacing

from conftest import random_cloud, random_unit_vectors


def brute_knn(pts, q, k):
    d = np.linalg.norm(pts - q, axis=1)
    order = np.lexsort((np.arange(len(d)), d))[:k]
    return order


def brute_radius(pts, q, r):
    d = np.linalg.norm(pts - q, axis=1)
    idx = np.nonzero(d <= r)[0]
    return idx[np.lexsort((idx, d[idx]))]


class TestSpatialIndex:
    def test_knn_matches_brute_force_on_random_clouds(self):
        rng = np.random.default_rng(10)
        for trial in range(50):
            n = int(rng.integers(5, 500))
            pts = random_cloud(rng, n, scale=2.0)
            index = SpatialIndex(PointCloud(pts))
            k = int(rng.integers(1, min(n, 12) + 1))
            queries = random_cloud(rng, 8, scale=2.5)
            _, got = index.knn(queries, k)
            for qi, q in enumerate(queries):
                np.testing.assert_array_equal(got[qi], brute_knn(pts, q, k))

    def test_radius_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(5, 400))
            pts = random_cloud(rng, n)
            index = SpatialIndex(PointCloud(pts))
            q = random_cloud(rng, 1)[0]
            r = float(rng.uniform(0.05, 1.0))
            _, got = index.radius(q, r)
            np.testing.assert_array_equal(got, brute_radius(pts, q, r))

    def test_knn_tie_break_lower_index_on_grid(self):
        # integer lattice: distance ties everywhere
        g = np.stack(np.meshgrid(range(4), range(4), range(4)), axis=-1).reshape(-1, 3).astype(float)
        index = SpatialIndex(PointCloud(g))
        for k in (1, 3, 7, 19, 64):
            _, got = index.knn(g[:5], k)
            for qi in range(5):
                np.testing.assert_array_equal(got[qi], brute_knn(g, g[qi], k))

    def test_knn_with_duplicated_points(self):
        pts = np.array([[0.0, 0, 0], [0, 0, 0], [0, 0, 0], [1, 0, 0], [1, 0, 0]])
        index = SpatialIndex(PointCloud(pts))
        _, got = index.knn(np.array([0.0, 0, 0]), 4)
        np.testing.assert_array_equal(got, [0, 1, 2, 3])

    def test_knn_self_is_nearest(self):
        pts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 2, 0]])
        index = SpatialIndex(PointCloud(pts))
        for i, p in enumerate(pts):
            _, got = index.knn(p, 1)
            assert got[0] == i

    def test_radius_zero_returns_coincident_only(self):
        pts = np.array([[0.0, 0, 0], [0, 0, 0], [0.5, 0, 0]])
        index = SpatialIndex(PointCloud(pts))
        _, got = index.radius(np.zeros(3), 0.0)
        np.testing.assert_array_equal(got, [0, 1])

    def test_empty_cloud_rejected(self):
        with pytest.raises(DegenerateInputError, match="empty"):
            SpatialIndex(PointCloud(np.zeros((0, 3))))

    def test_k_out_of_range(self):
        index = SpatialIndex(PointCloud(np.eye(3)))
        with pytest.raises(ValueError):
            index.knn(np.zeros(3), 4)


class TestEstimateNormals:
    def test_plane_normals(self):
        rng = np.random.default_rng(12)
        pts = np.column_stack([rng.uniform(-1, 1, 200), rng.uniform(-1, 1, 200), np.zeros(200)])
        out = estimate_normals(PointCloud(pts), k=10)
        assert np.all(np.abs(np.abs(out.normals[:, 2]) - 1.0) < 1e-6)

    def test_sphere_normals_point_outward_toward_viewpoint(self):
        # analytic oracle: the exact normal of a unit sphere at p is p itself
        rng = np.random.default_rng(13)
        pts = random_unit_vectors(rng, 1500)
        viewpoint = np.array([0.0, 0.0, 6.0])
        out = estimate_normals(PointCloud(pts), k=12, viewpoint=viewpoint)
        visible = pts[:, 2] > 0.25  # camera-facing cap
        dots = np.einsum("ij,ij->i", out.normals[visible], pts[visible])
        assert np.min(dots) > 0.9

    def test_sphere_normals_centroid_mode(self):
        rng = np.random.default_rng(14)
        pts = random_unit_vectors(rng, 1500)
        out = estimate_normals(PointCloud(pts), k=12, orient="centroid")
        dots = np.einsum("ij,ij->i", out.normals, pts)
        assert np.min(dots) > 0.9

    def test_equivariance_under_rigid_transform(self):
        rng = np.random.default_rng(15)
        pts = random_cloud(rng, 300)
        base = estimate_normals(PointCloud(pts), k=10)
        t = RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3))
        moved = estimate_normals(PointCloud(t.apply_points(pts)), k=10)
        expected = base.normals @ t.rotation.T
        dots = np.abs(np.einsum("ij,ij->i", moved.normals, expected))
        angles = np.arccos(np.clip(dots, -1.0, 1.0))
        assert np.max(angles) < 1e-4

    def test_degenerate_neighborhood_flagged(self):
        pts = np.zeros((5, 3))
        with pytest.warns(UserWarning, match="degenerate"):
            out = estimate_normals(PointCloud(pts), k=3)
        np.testing.assert_array_equal(out.normals, np.tile([0.0, 0.0, 1.0], (5, 1)))

    def test_requires_enough_points(self):
        with pytest.raises(DegenerateInputError):
            estimate_normals(PointCloud(np.eye(3)), k=5)

    def test_align_normal_signs(self):
        n = np.array([[0.0, 0, 1], [0, 0, -1]])
        ref = np.tile([0.0, 0, 1], (2, 1))
        np.testing.assert_array_equal(align_normal_signs(n, ref), np.tile([0.0, 0, 1], (2, 1)))


def test_mean_nn_spacing_regular_grid():
    g = np.stack(np.meshgrid(range(5), range(5), [0]), axis=-1).reshape(-1, 3).astype(float)
    assert abs(mean_nn_spacing(PointCloud(g)) - 1.0) < 1e-12
