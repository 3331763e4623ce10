"""Pose-error metrics (ADD / ADI) and recall aggregation.

ADI pairs every estimated model point with its nearest ground-truth model
point, which makes it tolerant to object symmetry; ADD uses the identity
pairing. A pose is counted correct when ADI <= tau * diameter (tau = 0.10
by convention).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud, RigidTransform

DEFAULT_ADI_TAU = 0.10

RESULT_FIELDS = ("object_id", "scene_id", "noise_level", "method",
                 "adi", "add", "correct", "runtime_ms")


@dataclass(frozen=True)
class EvalResult:
    object_id: str
    scene_id: int
    adi: float
    add: float
    correct: bool


def add_metric(est: RigidTransform, gt: RigidTransform, model_cloud: PointCloud) -> float:
    """Mean distance between identically indexed model points under est vs gt."""
    pe = est.apply_points(model_cloud.points)
    pg = gt.apply_points(model_cloud.points)
    return float(np.mean(np.linalg.norm(pe - pg, axis=1)))


def adi_metric(est: RigidTransform, gt: RigidTransform, model_cloud: PointCloud) -> float:
    """Mean nearest-neighbor distance from est-placed to gt-placed model points."""
    pe = est.apply_points(model_cloud.points)
    pg = gt.apply_points(model_cloud.points)
    d, _ = cKDTree(pg).query(pe)
    return float(np.mean(d))


def evaluate_pose(
    est: RigidTransform,
    gt: RigidTransform,
    model_cloud: PointCloud,
    diameter: float,
    object_id: str = "",
    scene_id: int = 0,
    tau: float = DEFAULT_ADI_TAU,
) -> EvalResult:
    adi = adi_metric(est, gt, model_cloud)
    add = add_metric(est, gt, model_cloud)
    assert adi <= add + 1e-9, "ADI must never exceed ADD"
    return EvalResult(
        object_id=object_id,
        scene_id=scene_id,
        adi=adi,
        add=add,
        correct=bool(adi <= tau * diameter),
    )


def recall(results) -> float:
    """Fraction of results marked correct."""
    results = list(results)
    if not results:
        raise ValueError("recall of an empty result list is undefined")
    return sum(1 for r in results if r.correct) / len(results)


def write_results_csv(path, rows: list[dict]) -> None:
    """Benchmark rows with the canonical column set, one line per evaluation."""
    with open(path, "w", newline="", encoding="ascii") as f:
        w = csv.DictWriter(f, fieldnames=RESULT_FIELDS)
        w.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("adi", "add", "noise_level", "runtime_ms"):
                out[key] = repr(float(out[key]))
            out["correct"] = int(bool(out["correct"]))
            w.writerow(out)


def read_results_csv(path) -> list[dict]:
    with open(path, "r", newline="", encoding="ascii") as f:
        rows = []
        for raw in csv.DictReader(f):
            rows.append({
                "object_id": raw["object_id"],
                "scene_id": int(raw["scene_id"]),
                "noise_level": float(raw["noise_level"]),
                "method": raw["method"],
                "adi": float(raw["adi"]),
                "add": float(raw["add"]),
                "correct": raw["correct"] in ("1", "True", "true"),
                "runtime_ms": float(raw["runtime_ms"]),
            })
        return rows
