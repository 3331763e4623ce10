import numpy as np
import pytest
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from keypose.geometry import DegenerateInputError, PointCloud, TriangleMesh, diameter
from keypose.meshes import BUILTIN_MESHES, cube, sphere
from keypose.sampling import (
    NoiseSpec,
    add_noise,
    build_object_model,
    farthest_point_sample,
    load_object_model,
    poisson_sample,
    save_object_model,
)

from conftest import random_unit_vectors


def unit_square_mesh():
    verts = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
    return TriangleMesh(verts, [[0, 1, 2], [0, 2, 3]])


def point_to_plane_distances(mesh: TriangleMesh, pts):
    """Min distance to any triangle's plane (oracle for the on-surface check)."""
    a = mesh.vertices[mesh.triangles[:, 0]]
    n = mesh.face_normals()
    offs = np.einsum("tj,ntj->nt", n, pts[:, None, :] - a[None, :, :])
    return np.min(np.abs(offs), axis=1)


class TestPoissonSample:
    def test_unit_square_min_distance_bound(self):
        n = 100
        pc = poisson_sample(unit_square_mesh(), n, seed=0)
        r_max = np.sqrt(1.0 / (2.0 * np.sqrt(3.0) * n))
        assert len(pc) == n
        assert pdist(pc.points).min() >= 0.5 * r_max

    def test_points_on_surface(self):
        pc = poisson_sample(cube(), 256, seed=1)
        assert np.max(point_to_plane_distances(cube(), pc.points)) < 1e-9

    def test_sphere_octant_uniformity(self):
        pc = poisson_sample(sphere(), 2048, seed=2)
        signs = (pc.points > 0).astype(int)
        octant = signs[:, 0] * 4 + signs[:, 1] * 2 + signs[:, 2]
        counts = np.bincount(octant, minlength=8)
        assert np.all(np.abs(counts - 2048 / 8) <= 0.2 * 2048 / 8)

    def test_min_distance_bound_all_builtin_meshes(self):
        # "no pair closer than the enforced disk radius" on every shipped mesh
        for name, fn in BUILTIN_MESHES.items():
            mesh = fn()
            n = 512
            pc = poisson_sample(mesh, n, seed=3)
            r_max = np.sqrt(mesh.area() / (2.0 * np.sqrt(3.0) * n))
            d, _ = cKDTree(pc.points).query(pc.points, k=2)
            assert d[:, 1].min() >= 0.5 * r_max, name

    def test_face_normals_carried(self):
        pc = poisson_sample(cube(), 128, seed=4)
        # every normal must be one of the six cube face normals
        axis_hits = np.max(np.abs(pc.normals), axis=1)
        np.testing.assert_allclose(axis_hits, 1.0, atol=1e-12)

    def test_determinism(self):
        a = poisson_sample(cube(), 200, seed=5)
        b = poisson_sample(cube(), 200, seed=5)
        np.testing.assert_array_equal(a.points, b.points)

    def test_rejects_tiny_n(self):
        with pytest.raises(ValueError):
            poisson_sample(cube(), 3)


class TestFarthestPointSample:
    def test_collinear_endpoints(self):
        pts = PointCloud([[0.0, 0, 0], [0.5, 0, 0], [1.0, 0, 0]])
        # find a seed whose first draw lands on index 0 (seeded uniform draw)
        for seed in range(100):
            sel = farthest_point_sample(pts, 2, seed=seed)
            if sel[0] == 0:
                assert sel[1] == 2  # the far endpoint maximizes distance
                return
        pytest.fail("no seed produced first pick 0")

    def test_full_selection_is_permutation(self):
        rng = np.random.default_rng(30)
        cloud = PointCloud(rng.uniform(size=(40, 3)))
        sel = farthest_point_sample(cloud, 40, seed=1)
        assert sorted(sel.tolist()) == list(range(40))

    def test_against_exhaustive_greedy_oracle(self):
        rng = np.random.default_rng(31)
        pts = random_unit_vectors(rng, 400)
        cloud = PointCloud(pts)
        sel = farthest_point_sample(cloud, 16, seed=7)

        # independent greedy oracle, deterministic first pick
        chosen = [0]
        for _ in range(15):
            d = np.min(
                np.linalg.norm(pts[:, None, :] - pts[chosen][None, :, :], axis=2), axis=1)
            chosen.append(int(np.argmax(d)))

        def min_geodesic_gap(idx):
            sub = pts[idx]
            cos = np.clip(sub @ sub.T, -1.0, 1.0)
            geo = np.arccos(cos)
            geo[np.diag_indices_from(geo)] = np.inf
            return geo.min()

        assert min_geodesic_gap(sel) >= 0.8 * min_geodesic_gap(np.asarray(chosen))

    def test_gap_sequence_monotone_and_coverage(self):
        rng = np.random.default_rng(32)
        pts = rng.uniform(size=(300, 3))
        cloud = PointCloud(pts)
        sel = farthest_point_sample(cloud, 25, seed=3)
        gaps = []
        for t in range(1, len(sel)):
            prev = pts[sel[:t]]
            gaps.append(float(np.min(np.linalg.norm(pts[sel[t]] - prev, axis=1))))
        assert all(a >= b - 1e-12 for a, b in zip(gaps, gaps[1:]))
        # coverage: every point within the final covering radius of a keypoint
        cover = np.min(np.linalg.norm(pts[:, None, :] - pts[sel][None, :, :], axis=2), axis=1)
        assert cover.max() <= gaps[-1] + 1e-12

    def test_k_exceeds_cloud(self):
        with pytest.raises(DegenerateInputError, match="exceeds"):
            farthest_point_sample(PointCloud(np.eye(3)), 4, seed=0)


class TestAddNoise:
    def test_zero_sigma_identity(self, cube_model):
        out = add_noise(cube_model.cloud, NoiseSpec(0.0, seed=1), cube_model.diameter)
        np.testing.assert_array_equal(out.points, cube_model.cloud.points)
        np.testing.assert_array_equal(out.normals, cube_model.cloud.normals)

    def test_empirical_std(self, cube_model):
        frac = 0.01
        out = add_noise(cube_model.cloud, NoiseSpec(frac, seed=2), cube_model.diameter)
        delta = out.points - cube_model.cloud.points
        sigma = frac * cube_model.diameter
        for axis in range(3):
            assert abs(delta[:, axis].std() - sigma) <= 0.1 * sigma

    def test_determinism(self, cube_model):
        a = add_noise(cube_model.cloud, NoiseSpec(0.02, seed=3), cube_model.diameter)
        b = add_noise(cube_model.cloud, NoiseSpec(0.02, seed=3), cube_model.diameter)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.normals, b.normals)

    def test_diameter_change_bounded(self, cube_model):
        s = 0.01
        out = add_noise(cube_model.cloud, NoiseSpec(s, seed=4), cube_model.diameter)
        assert abs(diameter(out) - cube_model.diameter) < 5 * s * cube_model.diameter

    def test_normals_stay_oriented_like_originals(self, cube_model):
        out = add_noise(cube_model.cloud, NoiseSpec(0.005, seed=5), cube_model.diameter)
        dots = np.einsum("ij,ij->i", out.normals, cube_model.cloud.normals)
        assert np.mean(dots > 0.0) > 0.99

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec(-0.1)


class TestBuildObjectModel:
    def test_cube_diameter_near_analytic(self, cube_model):
        expected = np.sqrt(3.0) * 0.08
        assert abs(cube_model.diameter - expected) <= 0.02 * expected

    def test_cloud_size_and_keypoints(self, cube_model):
        assert len(cube_model.cloud) == 2048
        assert len(cube_model.keypoint_indices) == 100
        assert len(set(cube_model.keypoint_indices.tolist())) == 100

    def test_same_seed_same_keypoints(self):
        a = build_object_model(cube(), 20, seed=9, n_points=256)
        b = build_object_model(cube(), 20, seed=9, n_points=256)
        np.testing.assert_array_equal(a.keypoint_indices, b.keypoint_indices)
        np.testing.assert_array_equal(a.cloud.points, b.cloud.points)

    def test_save_load_roundtrip(self, tmp_path, cube_model):
        ply = tmp_path / "model.ply"
        sidecar = tmp_path / "model.json"
        save_object_model(cube_model, ply, sidecar)
        back = load_object_model(ply, sidecar)
        np.testing.assert_array_equal(back.cloud.points, cube_model.cloud.points)
        np.testing.assert_array_equal(back.keypoint_indices, cube_model.keypoint_indices)
        assert back.diameter == cube_model.diameter

    def test_keypoint_validation(self, cube_model):
        from keypose.sampling import ObjectModel
        with pytest.raises(ValueError, match="unique"):
            ObjectModel(cube_model.cloud, np.array([1, 1, 2]), cube_model.diameter)
        with pytest.raises(ValueError, match="range"):
            ObjectModel(cube_model.cloud, np.array([0, 99999]), cube_model.diameter)
