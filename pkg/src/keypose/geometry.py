"""Rigid transforms, point clouds, and triangle meshes.

Everything downstream (sampling, matching, solving, evaluation) moves data
through these three containers. All arrays are float64 and frozen after
construction, so instances can be shared across worker threads/processes
without copies or locks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

# Orthonormality tolerance for accepting a rotation matrix.
ROTATION_TOL = 1e-6


class DegenerateInputError(ValueError):
    """Input geometry is too degenerate for the requested operation."""


def _frozen_f64(a, shape_tail: tuple[int, ...], name: str) -> FloatArray:
    """Copy to float64, validate trailing shape and finiteness, and freeze."""
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.shape[-len(shape_tail):] != shape_tail:
        raise ValueError(f"{name}: expected trailing shape {shape_tail}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion p -> R p + t.

    The rotation is validated to be orthonormal with det +1 at construction;
    composition and inverse therefore stay closed under the same tolerance.
    """

    rotation: FloatArray     # (3, 3)
    translation: FloatArray  # (3,)

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64, copy=True)
        t = np.array(self.translation, dtype=np.float64, copy=True).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("transform contains non-finite values")
        err = np.max(np.abs(R.T @ R - np.eye(3)))
        if err >= ROTATION_TOL:
            raise ValueError(f"rotation is not orthonormal (|R^T R - I|_inf = {err:.3g})")
        if np.linalg.det(R) < 0.0:
            raise ValueError("rotation has determinant -1 (reflection)")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_translation(t) -> "RigidTransform":
        return RigidTransform(np.eye(3), t)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return self after other: (self @ other)(p) = self(other(p))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def apply_points(self, points) -> FloatArray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def apply_directions(self, dirs) -> FloatArray:
        return np.asarray(dirs, dtype=np.float64) @ self.rotation.T

    def to_dict(self) -> dict:
        return {"R": self.rotation.tolist(), "t": self.translation.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "RigidTransform":
        return RigidTransform(np.asarray(d["R"]), np.asarray(d["t"]))


@dataclass(frozen=True)
class PointCloud:
    """3D points with optional per-point unit normals."""

    points: FloatArray            # (N, 3)
    normals: FloatArray | None = None  # (N, 3) or None

    def __post_init__(self):
        pts = _frozen_f64(self.points, (3,), "points")
        if pts.ndim != 2:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _frozen_f64(self.normals, (3,), "normals")
            if nrm.shape != pts.shape:
                raise ValueError(f"normals shape {nrm.shape} != points shape {pts.shape}")
            lens = np.linalg.norm(nrm, axis=1)
            if nrm.shape[0] and np.max(np.abs(lens - 1.0)) > 1e-6:
                raise ValueError("normals must be unit length (within 1e-6)")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def with_normals(self, normals) -> "PointCloud":
        return PointCloud(self.points, normals)

    def select(self, index) -> "PointCloud":
        """Subset/reorder by an index array; normals follow."""
        nrm = self.normals[index] if self.normals is not None else None
        return PointCloud(self.points[index], nrm)


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle surface; source geometry for object sampling."""

    vertices: FloatArray   # (V, 3)
    triangles: IntArray    # (T, 3) vertex indices

    def __post_init__(self):
        verts = _frozen_f64(self.vertices, (3,), "vertices")
        if verts.ndim != 2:
            raise ValueError(f"vertices must be (V, 3), got {verts.shape}")
        tris = np.array(self.triangles, dtype=np.int64, copy=True)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError(f"triangles must be (T, 3), got {tris.shape}")
        if tris.size and (tris.min() < 0 or tris.max() >= verts.shape[0]):
            raise ValueError("triangle indices out of range")
        tris.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        if self.area() <= 0.0:
            raise DegenerateInputError("mesh has zero total surface area")

    def triangle_areas(self) -> FloatArray:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def face_normals(self) -> FloatArray:
        """Unit normals from winding order; zero-area faces get +z."""
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        n = np.cross(b - a, c - a)
        lens = np.linalg.norm(n, axis=1)
        ok = lens > 0.0
        n[ok] /= lens[ok, None]
        n[~ok] = (0.0, 0.0, 1.0)
        return n


def apply_transform(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Map points p -> R p + t and normals n -> R n."""
    nrm = t.apply_directions(cloud.normals) if cloud.normals is not None else None
    return PointCloud(t.apply_points(cloud.points), nrm)


def _max_pairwise_distance(pts: FloatArray) -> float:
    # Chunked O(n^2); ~34 MB peak for 2048 points per chunk pair.
    best = 0.0
    step = 1024
    for i in range(0, pts.shape[0], step):
        block = pts[i:i + step]
        d2 = np.sum((block[:, None, :] - pts[None, :, :]) ** 2, axis=2)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def diameter(cloud: PointCloud) -> float:
    """Maximum pairwise distance; exact up to 4096 points, hull-based beyond."""
    pts = cloud.points
    n = pts.shape[0]
    if n == 0:
        raise DegenerateInputError("empty input")
    if n == 1:
        return 0.0
    if n <= 4096:
        return _max_pairwise_distance(pts)
    from scipy.spatial import ConvexHull, QhullError
    try:
        hull = ConvexHull(pts)
        return _max_pairwise_distance(pts[hull.vertices])
    except QhullError:
        # Degenerate (coplanar/collinear) cloud: fall back to exact.
        return _max_pairwise_distance(pts)


def rotation_about_axis(axis, angle: float) -> FloatArray:
    """Rodrigues rotation matrix for a given axis and angle (radians)."""
    k = np.asarray(axis, dtype=np.float64).reshape(3)
    n = np.linalg.norm(k)
    if n == 0.0:
        raise ValueError("axis must be non-zero")
    k = k / n
    K = np.array([[0.0, -k[2], k[1]],
                  [k[2], 0.0, -k[0]],
                  [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def random_rotation(rng: np.random.Generator) -> FloatArray:
    """Uniform random rotation (quaternion from 4 Gaussians, normalized)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotation_angle(R) -> float:
    """Rotation angle (radians) of a rotation matrix.

    atan2 form: precise for tiny angles, where acos((tr-1)/2) bottoms out
    around 1e-8.
    """
    R = np.asarray(R)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    cos_term = (float(np.trace(R)) - 1.0) / 2.0
    return float(np.arctan2(np.linalg.norm(w), cos_term))


def rotation_angle_between(t1: RigidTransform, t2: RigidTransform) -> float:
    return rotation_angle(t1.rotation.T @ t2.rotation)
