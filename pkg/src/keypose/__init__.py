"""Keypoint-matching 6D pose estimation in 3D point clouds.

Pipeline: object sampling (Poisson-disk + farthest point keypoints),
correspondence generation (calibrated oracle or FPFH matching),
coarse-to-fine RANSAC with Kabsch alignment, synthetic bin-scene
generation, and ADI-based evaluation.
"""

from .features import FeatureCloud, compute_fpfh, match_features
from .geometry import (
    DegenerateInputError,
    PointCloud,
    RigidTransform,
    TriangleMesh,
    apply_transform,
    diameter,
)
from .matchgen import (
    CorrespondenceSet,
    MatchPrediction,
    OracleSpec,
    extract_correspondences,
    oracle_predict,
)
from .metrics import EvalResult, add_metric, adi_metric, evaluate_pose, recall
from .sampling import (
    NoiseSpec,
    ObjectModel,
    add_noise,
    build_object_model,
    farthest_point_sample,
    poisson_sample,
)
from .scenegen import (
    BinSpec,
    SceneSample,
    crop_and_center,
    generate_scene_sample,
    sample_bin_scene,
    visibility_filter,
)
from .solver import (
    PoseEstimate,
    RansacConfig,
    icp_refine,
    kabsch,
    ransac_classic,
    ransac_coarse_to_fine,
)
from .spatial import SpatialIndex, estimate_normals

__all__ = [
    "BinSpec",
    "CorrespondenceSet",
    "DegenerateInputError",
    "EvalResult",
    "FeatureCloud",
    "MatchPrediction",
    "NoiseSpec",
    "ObjectModel",
    "OracleSpec",
    "PointCloud",
    "PoseEstimate",
    "RansacConfig",
    "RigidTransform",
    "SceneSample",
    "SpatialIndex",
    "TriangleMesh",
    "add_metric",
    "add_noise",
    "adi_metric",
    "apply_transform",
    "build_object_model",
    "compute_fpfh",
    "crop_and_center",
    "diameter",
    "estimate_normals",
    "evaluate_pose",
    "extract_correspondences",
    "farthest_point_sample",
    "generate_scene_sample",
    "icp_refine",
    "kabsch",
    "match_features",
    "oracle_predict",
    "poisson_sample",
    "ransac_classic",
    "ransac_coarse_to_fine",
    "recall",
    "sample_bin_scene",
    "visibility_filter",
]

__version__ = "0.1.0"
