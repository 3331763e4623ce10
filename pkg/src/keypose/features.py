"""FPFH descriptors and feature-space matching (the classical baseline).

Per point, a Simplified Point Feature Histogram accumulates three
Darboux-frame angles over radius neighbors into 11 bins each; the final
descriptor re-weights every neighbor's SPFH by inverse distance:

    fpfh_p = spfh_p + (1/k) * sum_q spfh_q / |p - q|

All three 11-bin blocks are normalized to sum 100. Descriptors depend only
on relative geometry, so they are invariant to rigid motion of the cloud
(given consistently transformed normals).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .geometry import FloatArray, PointCloud
from .matchgen import CorrespondenceSet
from .spatial import mean_nn_spacing

N_BINS = 11
N_FEATURES = 3
DESCRIPTOR_SIZE = N_BINS * N_FEATURES
DEFAULT_RADIUS_SPACING_FACTOR = 5.0


@dataclass(frozen=True)
class FeatureCloud:
    """Point cloud with one 33-bin FPFH descriptor per point."""

    cloud: PointCloud
    descriptors: FloatArray  # (N, 33)

    def __post_init__(self):
        desc = np.array(self.descriptors, dtype=np.float64, copy=True)
        if desc.shape != (len(self.cloud), DESCRIPTOR_SIZE):
            raise ValueError(
                f"descriptors must be ({len(self.cloud)}, {DESCRIPTOR_SIZE}), got {desc.shape}")
        desc.setflags(write=False)
        object.__setattr__(self, "descriptors", desc)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="ascii") as f:
            w = csv.writer(f)
            w.writerow([f"bin_{i}" for i in range(DESCRIPTOR_SIZE)])
            for row in self.descriptors:
                w.writerow([repr(float(v)) for v in row])


def _pair_angles(pts, normals, src, dst):
    """Darboux angles (alpha, phi, theta) for directed point pairs src -> dst.

    Pairs with zero length or with the displacement parallel to the source
    normal (frame undefined) are dropped; the drop test is rotation
    invariant, so descriptors stay rigid-invariant.
    """
    diff = pts[dst] - pts[src]
    d = np.linalg.norm(diff, axis=1)
    ok = d > 0.0
    dhat = np.zeros_like(diff)
    dhat[ok] = diff[ok] / d[ok, None]

    u = normals[src]
    v = np.cross(dhat, u)
    vnorm = np.linalg.norm(v, axis=1)
    ok &= vnorm > 1e-6
    v[ok] /= vnorm[ok, None]
    w = np.cross(u, v)

    nt = normals[dst]
    alpha = np.einsum("ij,ij->i", v, nt)
    phi = np.einsum("ij,ij->i", u, dhat)
    theta = np.arctan2(np.einsum("ij,ij->i", w, nt), np.einsum("ij,ij->i", u, nt))
    return alpha, phi, theta, d, ok


def _bin_index(values, lo, hi):
    b = np.floor((values - lo) / (hi - lo) * N_BINS).astype(np.int64)
    return np.clip(b, 0, N_BINS - 1)


def _normalize_blocks(hist: FloatArray) -> FloatArray:
    out = hist.reshape(-1, N_FEATURES, N_BINS)
    sums = out.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(sums > 0.0, out / sums * 100.0, 0.0)
    return out.reshape(-1, DESCRIPTOR_SIZE)


def compute_fpfh(cloud: PointCloud, radius: float | None = None) -> FeatureCloud:
    """FPFH descriptors over radius neighborhoods.

    Default radius: 5x the cloud's mean nearest-neighbor spacing. Points
    with no neighbors inside the radius get a zero histogram (and a warning).
    """
    if cloud.normals is None:
        raise ValueError("cloud must carry normals")
    if radius is None:
        radius = DEFAULT_RADIUS_SPACING_FACTOR * mean_nn_spacing(cloud)
    if not radius > 0.0:
        raise ValueError("radius must be > 0")

    pts = cloud.points
    n = len(cloud)
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    if pairs.size:
        src = np.concatenate([pairs[:, 0], pairs[:, 1]])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    else:
        src = np.empty(0, dtype=np.int64)
        dst = np.empty(0, dtype=np.int64)

    alpha, phi, theta, d, ok = _pair_angles(pts, cloud.normals, src, dst)
    src, dst, d = src[ok], dst[ok], d[ok]
    b_alpha = _bin_index(alpha[ok], -1.0, 1.0)
    b_phi = _bin_index(phi[ok], -1.0, 1.0)
    b_theta = _bin_index(theta[ok], -np.pi, np.pi)

    flat = np.concatenate([
        src * DESCRIPTOR_SIZE + b_alpha,
        src * DESCRIPTOR_SIZE + N_BINS + b_phi,
        src * DESCRIPTOR_SIZE + 2 * N_BINS + b_theta,
    ])
    spfh = np.bincount(flat, minlength=n * DESCRIPTOR_SIZE).astype(np.float64)
    spfh = _normalize_blocks(spfh.reshape(n, DESCRIPTOR_SIZE))

    k = np.bincount(src, minlength=n).astype(np.float64)
    lonely = k == 0
    if np.any(lonely):
        warnings.warn(f"{int(lonely.sum())} points with no neighbors in radius "
                      f"{radius:.4g}; descriptors zeroed")

    weights = sparse.csr_matrix((1.0 / d, (src, dst)), shape=(n, n))
    neighbor_term = weights @ spfh
    with np.errstate(invalid="ignore", divide="ignore"):
        fpfh = spfh + np.where(k[:, None] > 0.0, neighbor_term / np.maximum(k, 1.0)[:, None], 0.0)
    fpfh = _normalize_blocks(fpfh)
    fpfh[lonely] = 0.0
    return FeatureCloud(cloud=cloud, descriptors=fpfh)


def match_features(
    scene: FeatureCloud,
    obj: FeatureCloud,
    mutual: bool = True,
) -> CorrespondenceSet:
    """Nearest-descriptor correspondences from scene points to object points.

    With the mutual filter (default), a pair survives only if the object
    point's nearest scene descriptor is the original query; this symmetric
    rule produces the same pair set with the arguments swapped.
    """
    if len(scene.cloud) == 0 or len(obj.cloud) == 0:
        raise ValueError("both feature clouds must be non-empty")
    obj_tree = cKDTree(obj.descriptors)
    d_so, nn_obj = obj_tree.query(scene.descriptors)
    scene_idx = np.arange(len(scene.cloud), dtype=np.int64)
    if mutual:
        scene_tree = cKDTree(scene.descriptors)
        _, nn_scene = scene_tree.query(obj.descriptors)
        keep = nn_scene[nn_obj] == scene_idx
        scene_idx = scene_idx[keep]
        nn_obj = nn_obj[keep]
        d_so = d_so[keep]
    return CorrespondenceSet(
        scene_indices=scene_idx,
        keypoint_indices=nn_obj.astype(np.int64),
        weights=d_so,
    )
