"""Scene-to-keypoint match generation at calibrated accuracy.

This stands in for a learned matching head. Scores are a softmax over
negative point-to-keypoint distances under the ground-truth pose, so
geometry (including object symmetry) shapes the distributions; a seeded
fraction of rows is corrupted into confident-but-wrong predictions and
segmentation labels are flipped at the configured rate. Correspondences are
then extracted with a vote threshold relative to each row's maximum score,
which admits multiple keypoint matches at a single scene point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .geometry import DegenerateInputError, FloatArray, IntArray, PointCloud, RigidTransform
from .sampling import ObjectModel
from .seeding import rng_for

DEFAULT_VOTE_THRESHOLD = 0.7
SEG_DECISION = 0.5


@dataclass(frozen=True)
class OracleSpec:
    """Accuracy calibration for generated predictions.

    Defaults match the reference operating point: 96% segmentation accuracy
    and 31% top-1 keypoint accuracy, with score temperature expressed as a
    fraction of object diameter.
    """

    seg_accuracy: float = 0.96
    keypoint_accuracy: float = 0.31
    temperature: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.seg_accuracy <= 1.0:
            raise ValueError("seg_accuracy must be in (0, 1]")
        if not 0.0 < self.keypoint_accuracy <= 1.0:
            raise ValueError("keypoint_accuracy must be in (0, 1]")
        if not self.temperature > 0.0:
            raise ValueError("temperature must be > 0")


@dataclass(frozen=True)
class MatchPrediction:
    """Per-scene-point segmentation probability and keypoint score rows."""

    seg_prob: FloatArray        # (N,)
    keypoint_scores: FloatArray  # (N, K), rows sum to 1

    def __post_init__(self):
        seg = np.array(self.seg_prob, dtype=np.float64, copy=True).reshape(-1)
        scores = np.array(self.keypoint_scores, dtype=np.float64, copy=True)
        if scores.ndim != 2 or scores.shape[0] != seg.shape[0]:
            raise ValueError("keypoint_scores must be (N, K) matching seg_prob")
        if seg.size and (seg.min() < 0.0 or seg.max() > 1.0):
            raise ValueError("seg_prob must lie in [0, 1]")
        if scores.size and np.max(np.abs(scores.sum(axis=1) - 1.0)) > 1e-6:
            raise ValueError("keypoint score rows must sum to 1")
        seg.setflags(write=False)
        scores.setflags(write=False)
        object.__setattr__(self, "seg_prob", seg)
        object.__setattr__(self, "keypoint_scores", scores)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="ascii") as f:
            w = csv.writer(f)
            k = self.keypoint_scores.shape[1]
            w.writerow(["scene_index", "seg_prob"] + [f"score_{j}" for j in range(k)])
            for i in range(self.seg_prob.shape[0]):
                w.writerow([i, repr(float(self.seg_prob[i]))] +
                           [repr(float(v)) for v in self.keypoint_scores[i]])


@dataclass(frozen=True)
class CorrespondenceSet:
    """(scene index, keypoint index) pairs; a scene point may vote many times."""

    scene_indices: IntArray
    keypoint_indices: IntArray
    weights: FloatArray | None = None

    def __post_init__(self):
        si = np.array(self.scene_indices, dtype=np.int64, copy=True).reshape(-1)
        ki = np.array(self.keypoint_indices, dtype=np.int64, copy=True).reshape(-1)
        if si.shape != ki.shape:
            raise ValueError("scene_indices and keypoint_indices must match in length")
        si.setflags(write=False)
        ki.setflags(write=False)
        object.__setattr__(self, "scene_indices", si)
        object.__setattr__(self, "keypoint_indices", ki)
        if self.weights is not None:
            w = np.array(self.weights, dtype=np.float64, copy=True).reshape(-1)
            if w.shape != si.shape:
                raise ValueError("weights must match pair count")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.scene_indices.shape[0]

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.scene_indices.tolist(), self.keypoint_indices.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="ascii") as f:
            w = csv.writer(f)
            w.writerow(["scene_index", "keypoint_index", "weight"])
            weights = self.weights if self.weights is not None else np.ones(len(self))
            for s, k, wt in zip(self.scene_indices, self.keypoint_indices, weights):
                w.writerow([int(s), int(k), repr(float(wt))])


def _softmax_rows(logits: FloatArray) -> FloatArray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def oracle_predict(
    scene: PointCloud,
    model: ObjectModel,
    gt_pose: RigidTransform,
    instance_mask,
    spec: OracleSpec,
) -> MatchPrediction:
    """Generate calibrated predictions for a scene against one target instance.

    Scores: softmax over -d_j / (temperature * diameter), where d_j is the
    distance from the scene point to the j-th keypoint under gt_pose. A row
    is corrupted with probability (1 - keypoint_accuracy) by re-centering its
    distance field on a random non-true keypoint, leaving it confidently
    wrong. Segmentation probabilities reproduce the mask at seg_accuracy.
    Fully deterministic given spec.seed.
    """
    mask = np.asarray(instance_mask, dtype=bool).reshape(-1)
    n = len(scene)
    if n == 0 or len(model.cloud) == 0:
        raise DegenerateInputError("empty scene or model")
    if mask.shape[0] != n:
        raise ValueError("instance_mask length must equal scene size")

    kp = gt_pose.apply_points(model.keypoints)          # (K, 3)
    k = kp.shape[0]
    scale = spec.temperature * model.diameter
    d = np.linalg.norm(scene.points[:, None, :] - kp[None, :, :], axis=2)  # (N, K)
    scores = _softmax_rows(-d / scale)
    true_kp = np.argmin(d, axis=1)

    rng = rng_for(spec.seed, "oracle")
    corrupt = rng.random(n) >= spec.keypoint_accuracy
    if k > 1 and np.any(corrupt):
        # Uniform over the K-1 non-true keypoints, via a shifted draw.
        draw = rng.integers(0, k - 1, size=n)
        wrong = np.where(draw >= true_kp, draw + 1, draw)
        kp_d = np.linalg.norm(kp[:, None, :] - kp[None, :, :], axis=2)  # (K, K)
        scores = np.where(corrupt[:, None], _softmax_rows(-kp_d[wrong] / scale), scores)

    seg_flip = rng.random(n) >= spec.seg_accuracy
    seg_positive = mask ^ seg_flip
    conf = rng.random(n)
    seg_prob = np.where(seg_positive, 0.5 + 0.5 * conf, 0.5 * conf)

    return MatchPrediction(seg_prob=seg_prob, keypoint_scores=scores)


def extract_correspondences(
    pred: MatchPrediction,
    vote_threshold: float = DEFAULT_VOTE_THRESHOLD,
) -> CorrespondenceSet:
    """Vote-threshold extraction of (scene point, keypoint) pairs.

    Segmentation-positive points (seg_prob >= 0.5) emit a pair for every
    keypoint whose score reaches vote_threshold times the row maximum; a
    threshold of 1.0 therefore yields exactly the argmax per point.
    """
    if not 0.0 < vote_threshold <= 1.0:
        raise ValueError("vote_threshold must be in (0, 1]")
    seg = pred.seg_prob >= SEG_DECISION
    scores = pred.keypoint_scores
    row_max = scores.max(axis=1, keepdims=True)
    votes = (scores >= vote_threshold * row_max) & seg[:, None]
    scene_idx, kp_idx = np.nonzero(votes)
    return CorrespondenceSet(
        scene_indices=scene_idx.astype(np.int64),
        keypoint_indices=kp_idx.astype(np.int64),
        weights=scores[scene_idx, kp_idx],
    )
