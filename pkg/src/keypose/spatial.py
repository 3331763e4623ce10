"""Spatial queries over a point-cloud snapshot, and PCA normal estimation.

The index wraps a kd-tree but pins down tie-breaking: results are ordered by
(distance, point index), so equidistant neighbors always resolve to the lower
index regardless of tree internals. Queries are read-only and safe to issue
from many workers at once.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.spatial import cKDTree

from .geometry import DegenerateInputError, FloatArray, IntArray, PointCloud

DEFAULT_NORMAL_K = 30


class SpatialIndex:
    """k-nearest / radius queries with deterministic (distance, index) order."""

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise DegenerateInputError("empty input")
        self._points = cloud.points
        self._tree = cKDTree(self._points)

    def __len__(self) -> int:
        return self._points.shape[0]

    def knn(self, query, k: int) -> tuple[FloatArray, IntArray]:
        """k nearest neighbors of one query point or a (Q, 3) batch.

        Returns (distances, indices) of shape (k,) / (Q, k), sorted by
        distance with exact ties broken by lower point index.
        """
        q = np.asarray(query, dtype=np.float64)
        single = q.ndim == 1
        q = np.atleast_2d(q)
        n = len(self)
        if not 1 <= k <= n:
            raise ValueError(f"k={k} out of range for {n} points")

        if k < n:
            d, idx = self._tree.query(q, k=k + 1)
            # A boundary tie is possible only where the (k+1)-th neighbor sits
            # at (nearly) the same distance as the k-th; those rows get the
            # exact brute-force path so the kept set matches the oracle.
            ambiguous = d[:, k] <= d[:, k - 1] * (1.0 + 1e-12)
            d, idx = d[:, :k].copy(), idx[:, :k].copy()
        else:
            d, idx = self._tree.query(q, k=k)
            d = d.reshape(len(q), k).copy()
            idx = idx.reshape(len(q), k).copy()
            ambiguous = np.ones(len(q), dtype=bool)

        # Interior ties never change the set, only the order.
        order = np.lexsort((idx, d), axis=1)
        d = np.take_along_axis(d, order, axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        for row in np.nonzero(ambiguous)[0]:
            dr, ir = self._exact_knn(q[row], k)
            d[row], idx[row] = dr, ir

        idx = idx.astype(np.int64)
        if single:
            return d[0], idx[0]
        return d, idx

    def _exact_knn(self, q: FloatArray, k: int) -> tuple[FloatArray, IntArray]:
        d = np.linalg.norm(self._points - q, axis=1)
        order = np.lexsort((np.arange(len(d)), d))[:k]
        return d[order], order.astype(np.int64)

    def radius(self, query, r: float) -> tuple[FloatArray, IntArray]:
        """All neighbors of a single point within r, sorted by (distance, index)."""
        q = np.asarray(query, dtype=np.float64).reshape(3)
        idx = np.asarray(self._tree.query_ball_point(q, r), dtype=np.int64)
        if idx.size == 0:
            return np.empty(0), idx
        d = np.linalg.norm(self._points[idx] - q, axis=1)
        order = np.lexsort((idx, d))
        return d[order], idx[order]

    def neighbor_matrix(self, k: int) -> IntArray:
        """(N, k) neighbor indices for every indexed point (self included)."""
        _, idx = self.knn(self._points, k)
        return idx


def estimate_normals(
    cloud: PointCloud,
    k: int = DEFAULT_NORMAL_K,
    viewpoint=(0.0, 0.0, 0.0),
    orient: str = "viewpoint",
) -> PointCloud:
    """Per-point normals from the k-neighborhood covariance.

    Each normal is the eigenvector of the smallest eigenvalue of its local
    covariance. Sign is disambiguated by `orient`:

    * "viewpoint": flip toward `viewpoint` (default: camera at the origin) -
      the convention for scene clouds, which live in the camera frame.
    * "centroid": flip away from the cloud centroid - the convention for
      closed object surfaces.

    Degenerate neighborhoods (all points coincident) get +z and a warning.
    """
    pts = cloud.points
    n = pts.shape[0]
    if k < 3:
        raise ValueError("k must be >= 3")
    if n < k:
        raise DegenerateInputError(f"cloud has {n} points, need at least k={k}")

    idx = SpatialIndex(cloud).neighbor_matrix(k)
    nb = pts[idx]                               # (N, k, 3)
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals, eigvecs = np.linalg.eigh(cov)      # ascending eigenvalues
    normals = eigvecs[:, :, 0].copy()

    spread = eigvals.sum(axis=1)                # total neighborhood variance
    degenerate = spread <= 1e-20 * max(1.0, float(spread.max(initial=0.0)))
    if np.any(degenerate):
        warnings.warn(f"{int(degenerate.sum())} degenerate neighborhoods; normals set to +z")
        normals[degenerate] = (0.0, 0.0, 1.0)

    if orient == "viewpoint":
        ref = np.asarray(viewpoint, dtype=np.float64).reshape(3) - pts
    elif orient == "centroid":
        ref = pts - pts.mean(axis=0)
    else:
        raise ValueError(f"unknown orientation mode: {orient!r}")
    flip = np.einsum("ni,ni->n", normals, ref) < 0.0
    flip &= ~degenerate
    normals[flip] *= -1.0

    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return cloud.with_normals(normals)


def align_normal_signs(normals: FloatArray, reference: FloatArray) -> FloatArray:
    """Flip normals whose dot product with the reference normal is negative."""
    out = np.array(normals, copy=True)
    flip = np.einsum("ni,ni->n", out, np.asarray(reference)) < 0.0
    out[flip] *= -1.0
    return out


def mean_nn_spacing(cloud: PointCloud) -> float:
    """Mean distance to the nearest distinct neighbor."""
    if len(cloud) < 2:
        raise DegenerateInputError("need at least 2 points")
    d, _ = cKDTree(cloud.points).query(cloud.points, k=2)
    return float(d[:, 1].mean())
