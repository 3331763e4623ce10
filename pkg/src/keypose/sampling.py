"""Object point-cloud generation and augmentation.

The object pipeline: Poisson-disk sampling of the mesh surface down to a
fixed budget (2048 points by default), farthest point sampling for the
keypoint subset, plus seeded Gaussian noise for robustness experiments.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import meshio
from .geometry import (
    DegenerateInputError,
    FloatArray,
    IntArray,
    PointCloud,
    TriangleMesh,
    diameter,
)
from .seeding import derive_seed, rng_for
from .spatial import DEFAULT_NORMAL_K, align_normal_signs, estimate_normals

OBJECT_CLOUD_SIZE = 2048
DEFAULT_KEYPOINTS = 100

# Weighted sample elimination: oversampling factor and weight falloff.
OVERSAMPLE = 8
ELIMINATION_ALPHA = 8.0


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian perturbation, std expressed as a fraction of object diameter."""

    sigma_fraction: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma_fraction < 0.0:
            raise ValueError("sigma_fraction must be >= 0")


@dataclass(frozen=True)
class ObjectModel:
    """Surface cloud, keypoint subset, and diameter of one rigid object."""

    cloud: PointCloud
    keypoint_indices: IntArray
    diameter: float
    seed: int = 0

    def __post_init__(self):
        idx = np.array(self.keypoint_indices, dtype=np.int64, copy=True)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("keypoint_indices must be a non-empty 1-D index array")
        if idx.min() < 0 or idx.max() >= len(self.cloud):
            raise ValueError("keypoint index out of range")
        if np.unique(idx).size != idx.size:
            raise ValueError("keypoint indices must be unique")
        if not self.diameter > 0.0:
            raise ValueError("diameter must be positive")
        idx.setflags(write=False)
        object.__setattr__(self, "keypoint_indices", idx)

    @property
    def keypoints(self) -> FloatArray:
        return self.cloud.points[self.keypoint_indices]

    @property
    def keypoint_normals(self) -> FloatArray:
        if not self.cloud.has_normals:
            raise ValueError("model cloud has no normals")
        return self.cloud.normals[self.keypoint_indices]


def _surface_candidates(mesh: TriangleMesh, m: int, rng: np.random.Generator):
    """m area-weighted uniform surface samples with their face normals."""
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0.0:
        raise DegenerateInputError("mesh has zero total surface area")
    tri = rng.choice(len(areas), size=m, p=areas / total)
    r1 = np.sqrt(rng.random(m))
    r2 = rng.random(m)
    a = mesh.vertices[mesh.triangles[tri, 0]]
    b = mesh.vertices[mesh.triangles[tri, 1]]
    c = mesh.vertices[mesh.triangles[tri, 2]]
    pts = (1.0 - r1)[:, None] * a + (r1 * (1.0 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return pts, mesh.face_normals()[tri]


def _sample_elimination(pts: FloatArray, n_keep: int, r_max: float) -> IntArray:
    """Greedy weighted elimination down to n_keep samples.

    Each sample is weighted by how crowded its 2*r_max neighborhood is; the
    heaviest sample is removed and its neighbors relaxed until n_keep remain.
    Deterministic: exact weight ties resolve to the lower index.
    """
    m = pts.shape[0]
    tree = cKDTree(pts)
    pairs = tree.query_pairs(2.0 * r_max, output_type="ndarray")
    if pairs.size:
        d = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
        contrib = (1.0 - d / (2.0 * r_max)) ** ELIMINATION_ALPHA
        src = np.concatenate([pairs[:, 0], pairs[:, 1]])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
        w2 = np.concatenate([contrib, contrib])
        order = np.argsort(src, kind="stable")
        src, dst, w2 = src[order], dst[order], w2[order]
        starts = np.searchsorted(src, np.arange(m + 1))
        weights = np.zeros(m)
        np.add.at(weights, src, w2)
    else:
        dst = np.empty(0, dtype=np.int64)
        w2 = np.empty(0)
        starts = np.zeros(m + 1, dtype=np.int64)
        weights = np.zeros(m)

    alive = np.ones(m, dtype=bool)
    heap = [(-weights[i], i) for i in range(m)]
    heapq.heapify(heap)
    remaining = m
    while remaining > n_keep:
        neg_w, i = heapq.heappop(heap)
        if not alive[i] or -neg_w != weights[i]:
            continue  # stale entry
        alive[i] = False
        remaining -= 1
        for k in range(starts[i], starts[i + 1]):
            j = dst[k]
            if alive[j]:
                weights[j] -= w2[k]
                heapq.heappush(heap, (-weights[j], j))
    return np.nonzero(alive)[0].astype(np.int64)


def poisson_sample(mesh: TriangleMesh, n: int, seed: int = 0) -> PointCloud:
    """n evenly spread surface points with face normals.

    Oversamples the surface uniformly by area, then applies weighted sample
    elimination targeting the hexagonal-packing radius
    r_max = sqrt(area / (2*sqrt(3)*n)).
    """
    if n < 4:
        raise ValueError("n must be >= 4")
    rng = rng_for(seed, "poisson")
    pts, nrm = _surface_candidates(mesh, OVERSAMPLE * n, rng)
    r_max = float(np.sqrt(mesh.area() / (2.0 * np.sqrt(3.0) * n)))
    keep = _sample_elimination(pts, n, r_max)
    return PointCloud(pts[keep], nrm[keep])


def farthest_point_sample(cloud: PointCloud, k: int, seed: int = 0) -> IntArray:
    """Greedy farthest point sampling; the first pick is a seeded uniform draw.

    Returns k unique indices. Ties in the farthest-point choice resolve to
    the lower index, so the result is fully determined by (cloud, k, seed).
    """
    n = len(cloud)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise DegenerateInputError("k exceeds cloud size")
    pts = cloud.points
    rng = rng_for(seed, "fps")
    selected = np.empty(k, dtype=np.int64)
    selected[0] = int(rng.integers(n))
    mind = np.linalg.norm(pts - pts[selected[0]], axis=1)
    mind[selected[0]] = -1.0
    for t in range(1, k):
        nxt = int(np.argmax(mind))
        selected[t] = nxt
        mind = np.minimum(mind, np.linalg.norm(pts - pts[nxt], axis=1))
        mind[nxt] = -1.0
    return selected


def add_noise(cloud: PointCloud, spec: NoiseSpec, diameter: float) -> PointCloud:
    """Perturb coordinates by N(0, (sigma_fraction * diameter)^2).

    Normals are re-estimated on the noisy cloud and sign-aligned to the
    originals. sigma_fraction == 0 returns the cloud unchanged.
    """
    if spec.sigma_fraction == 0.0:
        return cloud
    sigma = spec.sigma_fraction * diameter
    rng = rng_for(spec.seed, "noise")
    pts = cloud.points + rng.normal(0.0, sigma, size=cloud.points.shape)
    noisy = PointCloud(pts)
    n = len(noisy)
    if n < 4:
        return PointCloud(pts, cloud.normals)
    est = estimate_normals(noisy, k=min(DEFAULT_NORMAL_K, n))
    normals = est.normals
    if cloud.has_normals:
        normals = align_normal_signs(normals, cloud.normals)
    return PointCloud(pts, normals)


def build_object_model(
    mesh: TriangleMesh,
    k_keypoints: int = DEFAULT_KEYPOINTS,
    seed: int = 0,
    n_points: int = OBJECT_CLOUD_SIZE,
) -> ObjectModel:
    """Poisson-sample the mesh, measure the diameter, pick FPS keypoints."""
    cloud = poisson_sample(mesh, n_points, seed=derive_seed(seed, "surface"))
    dia = diameter(cloud)
    if dia <= 0.0:
        raise DegenerateInputError("sampled cloud has zero diameter")
    keypoints = farthest_point_sample(cloud, k_keypoints, seed=derive_seed(seed, "keypoints"))
    return ObjectModel(cloud=cloud, keypoint_indices=keypoints, diameter=dia, seed=seed)


def save_object_model(model: ObjectModel, ply_path, sidecar_path) -> None:
    meshio.write_ply(ply_path, model.cloud)
    sidecar = {
        "keypoints": model.keypoint_indices.tolist(),
        "diameter": model.diameter,
        "seed": model.seed,
    }
    with open(sidecar_path, "w", encoding="ascii") as f:
        json.dump(sidecar, f)
        f.write("\n")


def load_object_model(ply_path, sidecar_path) -> ObjectModel:
    cloud = meshio.read_ply(ply_path)
    with open(sidecar_path, "r", encoding="ascii") as f:
        sidecar = json.load(f)
    return ObjectModel(
        cloud=cloud,
        keypoint_indices=np.asarray(sidecar["keypoints"], dtype=np.int64),
        diameter=float(sidecar["diameter"]),
        seed=int(sidecar.get("seed", 0)),
    )
