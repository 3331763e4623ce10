"""End-to-end pose estimation for one scene, with timing split.

Three methods mirror the benchmark grid:

* ``oracle-c2f``     - generated matches + coarse-to-fine RANSAC
* ``oracle-classic`` - generated matches + single-distance RANSAC + ICP
* ``fpfh``           - FPFH matching + single-distance RANSAC + ICP

Object-side features (model keypoints, FPFH descriptors) are precomputed
once per object via `ObjectFeatures` and reused across scenes; per-scene
timing therefore covers only match generation and solving.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

from .features import DEFAULT_RADIUS_SPACING_FACTOR, FeatureCloud, compute_fpfh
from .geometry import DegenerateInputError, RigidTransform
from .matchgen import DEFAULT_VOTE_THRESHOLD, OracleSpec, extract_correspondences, oracle_predict
from .sampling import NoiseSpec, ObjectModel, add_noise
from .scenegen import SceneSample
from .solver import PoseEstimate, RansacConfig, icp_refine, ransac_classic, ransac_coarse_to_fine
from .spatial import mean_nn_spacing

METHODS = ("oracle-c2f", "oracle-classic", "fpfh")


@dataclass(frozen=True)
class ObjectFeatures:
    """Per-object precomputations shared across scenes."""

    model: ObjectModel
    fpfh: FeatureCloud
    fpfh_radius: float

    @staticmethod
    def build(model: ObjectModel) -> "ObjectFeatures":
        radius = DEFAULT_RADIUS_SPACING_FACTOR * mean_nn_spacing(model.cloud)
        return ObjectFeatures(model=model, fpfh=compute_fpfh(model.cloud, radius),
                              fpfh_radius=radius)


@dataclass(frozen=True)
class EstimateOutcome:
    estimate: PoseEstimate
    match_ms: float
    ransac_ms: float


def apply_scene_noise(sample: SceneSample, model: ObjectModel,
                      sigma_fraction: float, seed: int) -> SceneSample:
    """Noise the cropped scene cloud in place of a noisier sensor."""
    if sigma_fraction == 0.0:
        return sample
    noisy = add_noise(sample.cropped_cloud, NoiseSpec(sigma_fraction, seed), model.diameter)
    return replace(sample, cropped_cloud=noisy)


def _failure() -> PoseEstimate:
    return PoseEstimate(pose=RigidTransform.identity(), inlier_count=0,
                        inlier_fraction=0.0, refined=False)


def estimate_scene(
    sample: SceneSample,
    features: ObjectFeatures,
    method: str,
    oracle: OracleSpec = OracleSpec(),
    ransac: RansacConfig = RansacConfig(),
    vote_threshold: float = DEFAULT_VOTE_THRESHOLD,
    workers: int | None = None,
) -> EstimateOutcome:
    """Run one method on one scene sample; failures become zero-inlier poses."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    model = features.model
    scene = sample.cropped_cloud

    t0 = time.perf_counter()
    if method in ("oracle-c2f", "oracle-classic"):
        pred = oracle_predict(scene, model, sample.gt_pose, sample.instance_mask, oracle)
        corr = extract_correspondences(pred, vote_threshold)
    else:
        scene_fc = compute_fpfh(scene, features.fpfh_radius)
    match_ms = (time.perf_counter() - t0) * 1000.0

    t1 = time.perf_counter()
    try:
        if method == "oracle-c2f":
            est = ransac_coarse_to_fine(scene, model, corr, ransac, workers=workers)
        elif method == "oracle-classic":
            single = replace(ransac, shrink_divisors=())
            est = ransac_coarse_to_fine(scene, model, corr, single, workers=workers)
            if est.inlier_count > 0:
                pose = icp_refine(scene, model.cloud, est.pose,
                                  inlier_distance=single.resolve_distance(model.diameter))
                est = replace(est, pose=pose)
        else:
            est = ransac_classic(scene_fc, features.fpfh, ransac, workers=workers,
                                 diameter=model.diameter)
    except DegenerateInputError:
        est = _failure()
    ransac_ms = (time.perf_counter() - t1) * 1000.0
    return EstimateOutcome(estimate=est, match_ms=match_ms, ransac_ms=ransac_ms)
