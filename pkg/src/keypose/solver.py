"""Pose solving from correspondences.

Three layers:

* `kabsch` - closed-form weighted least-squares rigid alignment (SVD).
* `ransac_coarse_to_fine` - triplet hypotheses scored with a distance AND
  30-degree normal gate, then refinement rounds that shrink the inlier
  distance by /2, /3, /4, /5 (five rounds total counting the initial refit).
* `ransac_classic` - feature-matched single-distance RANSAC followed by
  point-to-point ICP, the comparison pipeline.

Hypothesis generation and scoring are deterministic given the config seed
and independent of worker count; ties between hypotheses resolve by higher
inlier count, lower inlier RMS, then lower hypothesis index.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass

import numba
import numpy as np
from scipy.spatial import cKDTree

from ._kernels import generate_and_score, inlier_stats, refit_pose
from .features import FeatureCloud, match_features
from .geometry import (
    DegenerateInputError,
    PointCloud,
    RigidTransform,
)
from .matchgen import CorrespondenceSet
from .sampling import ObjectModel
from .seeding import rng_for

DEFAULT_HYPOTHESES = 1000
DEFAULT_NORMAL_ANGLE_MAX = 30.0
DEFAULT_SHRINK_DIVISORS = (2, 3, 4, 5)
DEFAULT_INLIER_FRACTION_OF_DIAMETER = 0.10
TRIPLET_RETRIES = 10
DEFAULT_ICP_ITER = 30


@dataclass(frozen=True)
class RansacConfig:
    """Pose-search settings; inlier_distance None means 0.10 x object diameter."""

    n_hypotheses: int = DEFAULT_HYPOTHESES
    inlier_distance: float | None = None
    normal_angle_max: float = DEFAULT_NORMAL_ANGLE_MAX
    shrink_divisors: tuple[int, ...] = DEFAULT_SHRINK_DIVISORS
    seed: int = 0

    def __post_init__(self):
        if self.n_hypotheses < 1:
            raise ValueError("n_hypotheses must be >= 1")
        if self.inlier_distance is not None and not self.inlier_distance > 0.0:
            raise ValueError("inlier_distance must be > 0")
        divs = tuple(self.shrink_divisors)
        if any(b <= a for a, b in zip(divs, divs[1:])):
            raise ValueError("shrink_divisors must be strictly increasing")
        object.__setattr__(self, "shrink_divisors", divs)

    def resolve_distance(self, diameter: float) -> float:
        if self.inlier_distance is not None:
            return self.inlier_distance
        return DEFAULT_INLIER_FRACTION_OF_DIAMETER * diameter


@dataclass(frozen=True)
class PoseEstimate:
    pose: RigidTransform
    inlier_count: int
    inlier_fraction: float
    refined: bool

    def to_json_dict(self) -> dict:
        return {
            "R": self.pose.rotation.tolist(),
            "t": self.pose.translation.tolist(),
            "inliers": int(self.inlier_count),
            "inlier_fraction": float(self.inlier_fraction),
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="ascii") as f:
            json.dump(self.to_json_dict(), f)
            f.write("\n")


@contextmanager
def _worker_count(workers: int | None):
    """Temporarily set the scoring thread count (clamped to the launch max)."""
    if workers is None:
        yield
        return
    if workers < 1:
        raise ValueError("workers must be >= 1")
    previous = numba.get_num_threads()
    numba.set_num_threads(min(workers, numba.config.NUMBA_NUM_THREADS))
    try:
        yield
    finally:
        numba.set_num_threads(previous)


def kabsch(src, dst, weights=None) -> RigidTransform:
    """Least-squares rigid alignment: argmin_{R,t} sum w_i |R src_i + t - dst_i|^2.

    det(R) = +1 is enforced by flipping the smallest singular direction.
    Raises DegenerateInputError for collinear/coincident configurations
    (covariance rank < 2), where the rotation is not determined.
    """
    s = np.asarray(src, dtype=np.float64)
    d = np.asarray(dst, dtype=np.float64)
    if s.shape != d.shape or s.ndim != 2 or s.shape[1] != 3:
        raise ValueError("src and dst must both be (N, 3)")
    if s.shape[0] < 3:
        raise DegenerateInputError("need at least 3 point pairs")
    if weights is None:
        w = np.ones(s.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != s.shape[0] or np.any(w < 0.0) or w.sum() <= 0.0:
            raise ValueError("weights must be non-negative with positive sum")
    wsum = w.sum()
    cs = (w @ s) / wsum
    cd = (w @ d) / wsum
    a = s - cs
    b = d - cd
    h = (a * w[:, None]).T @ b
    u, sv, vt = np.linalg.svd(h)
    if not sv[1] > 1e-12 * max(sv[0], np.finfo(np.float64).tiny):
        raise DegenerateInputError("degenerate configuration")
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    flip = np.diag([1.0, 1.0, sign if sign != 0.0 else 1.0])
    rot = vt.T @ flip @ u.T
    return RigidTransform(rot, cd - rot @ cs)


def _pose_arrays(corr: CorrespondenceSet, model_points, model_normals, scene: PointCloud):
    if scene.normals is None:
        raise ValueError("scene cloud must carry normals (normal gate)")
    src = np.ascontiguousarray(model_points[corr.keypoint_indices])
    src_n = np.ascontiguousarray(model_normals[corr.keypoint_indices])
    dst = np.ascontiguousarray(scene.points[corr.scene_indices])
    dst_n = np.ascontiguousarray(scene.normals[corr.scene_indices])
    return src, src_n, dst, dst_n


def _inlier_mask(pose: RigidTransform, src, src_n, dst, dst_n, thr: float, cos_max: float):
    tp = src @ pose.rotation.T + pose.translation
    d2 = np.einsum("ij,ij->i", tp - dst, tp - dst)
    tn = src_n @ pose.rotation.T
    ca = np.einsum("ij,ij->i", tn, dst_n)
    return (d2 <= thr * thr) & (ca >= cos_max)


def _best_hypothesis(counts, rms):
    order = np.lexsort((np.arange(counts.shape[0]), rms, -counts))
    return int(order[0])


def _ransac_core(src, src_n, dst, dst_n, cfg: RansacConfig, base_distance: float,
                 area_min: float, workers: int | None, normal_gate: bool = True):
    """Shared hypothesize-and-verify stage. Returns (best pose, counts at base).

    Triplet draws (hypotheses x retries) are precomputed from one seeded
    stream, so the outcome does not depend on scheduling; the kernel takes
    the first non-degenerate draw per hypothesis, solves it, and scores it.
    """
    m = src.shape[0]
    rng = rng_for(cfg.seed, "triplets")
    draws = rng.integers(0, m, size=(cfg.n_hypotheses, TRIPLET_RETRIES, 3))

    cos_max = float(np.cos(np.deg2rad(cfg.normal_angle_max))) if normal_gate else -1.0
    with _worker_count(workers):
        counts, ssq, rot, t = generate_and_score(
            draws, src, src_n, dst, dst_n,
            base_distance * base_distance, cos_max, area_min)
    with np.errstate(invalid="ignore", divide="ignore"):
        rms = np.where(counts > 0, np.sqrt(ssq / np.maximum(counts, 1)), np.inf)

    best = _best_hypothesis(counts, rms)
    if counts[best] < 0:
        return RigidTransform.identity(), 0, cos_max
    pose = RigidTransform(rot[best], t[best])
    return pose, int(counts[best]), cos_max


def ransac_coarse_to_fine(
    scene: PointCloud,
    model: ObjectModel,
    corr: CorrespondenceSet,
    cfg: RansacConfig = RansacConfig(),
    workers: int | None = None,
) -> PoseEstimate:
    """Coarse-to-fine RANSAC over keypoint correspondences.

    Draws cfg.n_hypotheses Kabsch triplet poses, scores them by the number
    of correspondences passing the distance + normal gate, then refines the
    winner by refitting on its inliers while shrinking the inlier distance
    through cfg.shrink_divisors. Reported stats are measured at the smallest
    distance. Zero coarse inliers yields inlier_count 0 (caller treats as
    failure).
    """
    if len(corr) < 3:
        raise DegenerateInputError("need at least 3 correspondences")
    src, src_n, dst, dst_n = _pose_arrays(corr, model.keypoints, model.keypoint_normals, scene)
    base = cfg.resolve_distance(model.diameter)
    area_min = 1e-6 * model.diameter ** 2

    pose, coarse_count, cos_max = _ransac_core(src, src_n, dst, dst_n, cfg, base, area_min, workers)
    if coarse_count <= 0:
        return PoseEstimate(pose=pose, inlier_count=0, inlier_fraction=0.0, refined=False)

    refined = False
    for div in (1,) + cfg.shrink_divisors:
        thr = base / div
        cnt, rot, t = refit_pose(pose.rotation, pose.translation,
                                 src, src_n, dst, dst_n, thr * thr, cos_max)
        if cnt >= 3:
            pose = RigidTransform(rot, t)
            refined = True

    final_thr = base / cfg.shrink_divisors[-1] if cfg.shrink_divisors else base
    count = int(inlier_stats(pose.rotation, pose.translation, src, src_n, dst, dst_n,
                             final_thr * final_thr, cos_max)[0])
    return PoseEstimate(
        pose=pose,
        inlier_count=count,
        inlier_fraction=count / len(corr),
        refined=refined,
    )


def icp_refine(
    scene: PointCloud,
    model_cloud: PointCloud,
    init: RigidTransform,
    max_iter: int = DEFAULT_ICP_ITER,
    inlier_distance: float = np.inf,
) -> RigidTransform:
    """Point-to-point ICP: alternate truncated NN pairing and Kabsch.

    Stops when the pairing set repeats, the pairing RMS would increase
    (the step is rejected, keeping RMS monotone non-increasing), or after
    max_iter rounds. With no pairings at the initial pose, returns init.
    """
    if max_iter < 0:
        raise ValueError("max_iter must be >= 0")
    tree = cKDTree(scene.points)
    model_pts = model_cloud.points
    pose = init
    prev_rms = np.inf
    prev_sel_nn = None
    for _ in range(max_iter):
        tp = pose.apply_points(model_pts)
        d, nn = tree.query(tp)
        sel = d <= inlier_distance
        if not np.any(sel):
            return pose
        rms = float(np.sqrt(np.mean(d[sel] ** 2)))
        if rms > prev_rms * (1.0 + 1e-12):
            return prev_pose
        key = (sel.tobytes(), nn[sel].tobytes())
        if key == prev_sel_nn:
            return pose
        prev_pose = pose
        prev_rms = rms
        prev_sel_nn = key
        try:
            pose = kabsch(model_pts[sel], scene.points[nn[sel]])
        except DegenerateInputError:
            return pose
    return pose


def ransac_classic(
    scene: FeatureCloud,
    obj: FeatureCloud,
    cfg: RansacConfig = RansacConfig(),
    workers: int | None = None,
    diameter: float | None = None,
    mutual: bool = True,
) -> PoseEstimate:
    """Feature-matching RANSAC + ICP, the classical comparison pipeline.

    Single inlier distance (no shrink schedule) and distance-only inliers:
    feature matches carry estimated normals too unreliable for angular
    gating, so only the coarse-to-fine path uses the normal gate. The best
    hypothesis is refit on its inliers, polished with ICP against the full
    object cloud, and re-scored. `diameter` resolves the default inlier
    distance when cfg.inlier_distance is None (falls back to the object
    cloud's extent). Heavy noise collapses mutual consistency below three
    matches; that is a degenerate-input failure, not a silent fallback.
    """
    corr = match_features(scene, obj, mutual=mutual)
    if len(corr) < 3:
        raise DegenerateInputError("need at least 3 correspondences")
    if obj.cloud.normals is None:
        raise ValueError("object cloud must carry normals")
    src, src_n, dst, dst_n = _pose_arrays(corr, obj.cloud.points, obj.cloud.normals, scene.cloud)
    if diameter is None:
        from .geometry import diameter as cloud_diameter
        diameter = cloud_diameter(obj.cloud)
    base = cfg.resolve_distance(diameter)
    area_min = 1e-6 * diameter ** 2

    pose, coarse_count, cos_max = _ransac_core(src, src_n, dst, dst_n, cfg, base, area_min,
                                               workers, normal_gate=False)
    if coarse_count <= 0:
        return PoseEstimate(pose=pose, inlier_count=0, inlier_fraction=0.0, refined=False)

    cnt, rot, t = refit_pose(pose.rotation, pose.translation,
                             src, src_n, dst, dst_n, base * base, cos_max)
    if cnt >= 3:
        pose = RigidTransform(rot, t)
    pose = icp_refine(scene.cloud, obj.cloud, pose, max_iter=DEFAULT_ICP_ITER,
                      inlier_distance=base)

    count = int(inlier_stats(pose.rotation, pose.translation, src, src_n, dst, dst_n,
                             base * base, cos_max)[0])
    return PoseEstimate(
        pose=pose,
        inlier_count=count,
        inlier_fraction=count / len(corr),
        refined=True,
    )
