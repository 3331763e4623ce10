"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete. The end-to-end benchmark (criterion 7) runs once as
a session fixture and is shared by its sub-assertions.
"""

import json
import os
import time

import numba
import numpy as np
import pytest

from keypose.cli import main as cli_main
from keypose.features import compute_fpfh
from keypose.geometry import (
    PointCloud,
    RigidTransform,
    apply_transform,
    random_rotation,
    rotation_angle_between,
)
from keypose.matchgen import CorrespondenceSet, OracleSpec, oracle_predict
from keypose.metrics import add_metric, adi_metric
from keypose.solver import (
    RansacConfig,
    kabsch,
    ransac_coarse_to_fine,
)

from conftest import random_cloud, random_unit_vectors


def _report(criterion: int, label: str, detail: str = ""):
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {criterion}: {label} PASS{suffix}")


def random_pose(rng, t_norm_range=(0.5, 2.0)):
    t = random_unit_vectors(rng, 1)[0] * rng.uniform(*t_norm_range)
    return RigidTransform(random_rotation(rng), t)


def synthetic_correspondences(model, gt, inlier_fraction, rng):
    """Scene = posed model cloud; inliers point at keypoints, rest uniform."""
    scene = apply_transform(gt, model.cloud)
    n_in = len(model.keypoint_indices)
    n_out = int(round(n_in / inlier_fraction)) - n_in
    pairs_s = list(model.keypoint_indices) + list(rng.integers(0, len(scene), n_out))
    pairs_k = list(range(n_in)) + list(rng.integers(0, n_in, n_out))
    return scene, CorrespondenceSet(np.asarray(pairs_s), np.asarray(pairs_k))


def test_criterion_1_kabsch_exactness():
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    worst_rot, worst_trans = 0.0, 0.0
    for _ in range(10_000):
        n = int(rng.integers(3, 20))
        src = random_cloud(rng, n, scale=1.0)
        gt = random_pose(rng)
        est = kabsch(src, gt.apply_points(src))
        worst_rot = max(worst_rot, rotation_angle_between(est, gt))
        rel = np.linalg.norm(est.translation - gt.translation) / np.linalg.norm(gt.translation)
        worst_trans = max(worst_trans, rel)
    elapsed = time.perf_counter() - t0
    assert worst_rot < 1e-7, f"worst rotation error {worst_rot:.3g} rad"
    assert worst_trans < 1e-9, f"worst translation error {worst_trans:.3g} (relative)"
    assert elapsed < 5.0, f"took {elapsed:.2f}s"
    _report(1, "Kabsch exactness over 10^4 random poses",
            f"rot<{worst_rot:.2g} rad, trans<{worst_trans:.2g}, {elapsed:.2f}s")


def test_criterion_2_ransac_recovery_30pct(cube_model):
    rng = np.random.default_rng(1002)
    t0 = time.perf_counter()
    successes = 0
    for trial in range(100):
        gt = random_pose(rng, t_norm_range=(0.05, 0.2))
        scene, corr = synthetic_correspondences(cube_model, gt, 0.30, rng)
        est = ransac_coarse_to_fine(scene, cube_model, corr,
                                    RansacConfig(n_hypotheses=1000, seed=trial))
        if adi_metric(est.pose, gt, cube_model.cloud) < 0.05 * cube_model.diameter:
            successes += 1
    elapsed = time.perf_counter() - t0
    assert successes >= 99, f"only {successes}/100 recovered"
    assert elapsed < 30.0, f"took {elapsed:.2f}s"
    _report(2, "RANSAC recovery at 30% inliers",
            f"{successes}/100 in {elapsed:.1f}s")


def test_criterion_3_normal_gate_rejects_backside(cube_model):
    rng = np.random.default_rng(1003)
    zero_inlier_trials = 0
    for trial in range(100):
        gt = random_pose(rng, t_norm_range=(0.05, 0.2))
        scene = apply_transform(gt, cube_model.cloud)
        flipped = PointCloud(scene.points, -scene.normals)
        pairs_s = np.asarray(cube_model.keypoint_indices)
        pairs_k = np.arange(len(pairs_s))
        corr = CorrespondenceSet(pairs_s, pairs_k)
        est = ransac_coarse_to_fine(flipped, cube_model, corr, RansacConfig(seed=trial))
        if est.inlier_count == 0 and not est.refined:
            zero_inlier_trials += 1
    assert zero_inlier_trials == 100
    _report(3, "normal gate yields 0 inliers on opposed-normal sets", "100/100")


def test_criterion_4_coarse_to_fine_benefit(cube_model):
    from keypose.solver import _inlier_mask, _pose_arrays, _ransac_core
    rng = np.random.default_rng(1004)
    wins = 0
    trials = 200
    for trial in range(trials):
        gt = random_pose(rng, t_norm_range=(0.05, 0.2))
        scene, corr = synthetic_correspondences(cube_model, gt, 0.33, rng)
        noisy = PointCloud(
            scene.points + rng.normal(0, 0.01 * cube_model.diameter, scene.points.shape),
            scene.normals)
        cfg = RansacConfig(seed=trial)
        refined = ransac_coarse_to_fine(noisy, cube_model, corr, cfg)

        src, src_n, dst, dst_n = _pose_arrays(
            corr, cube_model.keypoints, cube_model.keypoint_normals, noisy)
        base = cfg.resolve_distance(cube_model.diameter)
        raw_pose, _, cos_max = _ransac_core(
            src, src_n, dst, dst_n, cfg, base, 1e-6 * cube_model.diameter ** 2, None)
        small = base / cfg.shrink_divisors[-1]
        raw_count = int(_inlier_mask(raw_pose, src, src_n, dst, dst_n, small, cos_max).sum())
        if refined.inlier_count >= raw_count:
            wins += 1
    assert wins >= 0.95 * trials, f"{wins}/{trials}"
    _report(4, "coarse-to-fine refinement benefit", f"{wins}/{trials} trials")


def test_criterion_5_adi_properties(cube_model, cylinder_model):
    rng = np.random.default_rng(1005)
    gt = random_pose(rng)
    assert adi_metric(gt, gt, cube_model.cloud) == 0.0

    for _ in range(1000):
        est, ref = random_pose(rng), random_pose(rng)
        adi = adi_metric(est, ref, cube_model.cloud)
        add = add_metric(est, ref, cube_model.cloud)
        assert adi <= add + 1e-9

    from keypose.geometry import rotation_about_axis
    sym = RigidTransform(rotation_about_axis([0, 0, 1], 2.0), np.zeros(3))
    ident = RigidTransform.identity()
    adi = adi_metric(sym, ident, cylinder_model.cloud)
    add = add_metric(sym, ident, cylinder_model.cloud)
    assert adi < 0.02 * cylinder_model.diameter
    assert add > 0.2 * cylinder_model.diameter
    _report(5, "ADI zero at gt, ADI<=ADD on 10^3 fuzz, cylinder symmetry case",
            f"cyl adi={adi:.4g}, add={add:.4g}")


def test_criterion_6_oracle_calibration(cube_model):
    rng = np.random.default_rng(1006)
    n = 12_000
    pts = random_cloud(rng, n, scale=cube_model.diameter)
    mask = rng.random(n) < 0.9
    gt = random_pose(rng, t_norm_range=(0.01, 0.1))
    spec = OracleSpec(seg_accuracy=0.96, keypoint_accuracy=0.31,
                      temperature=0.05, seed=1006)
    pred = oracle_predict(PointCloud(pts), cube_model, gt, mask, spec)

    kp = gt.apply_points(cube_model.keypoints)
    d = np.linalg.norm(pts[:, None, :] - kp[None, :, :], axis=2)
    true_kp = np.argmin(d, axis=1)
    assert int(mask.sum()) >= 10_000
    key_acc = float(np.mean(np.argmax(pred.keypoint_scores, axis=1)[mask] == true_kp[mask]))
    seg_acc = float(np.mean((pred.seg_prob >= 0.5) == mask))
    assert abs(key_acc - 0.31) <= 0.02, f"keypoint accuracy {key_acc:.4f}"
    assert abs(seg_acc - 0.96) <= 0.01, f"segmentation accuracy {seg_acc:.4f}"
    _report(6, "oracle calibration on 10^4+ masked points",
            f"key={key_acc:.3f} (0.31+/-0.02), seg={seg_acc:.3f} (0.96+/-0.01)")


# --- criterion 7: end-to-end grid -------------------------------------------

E2E_OBJECTS = ("cube", "cylinder", "sphere", "l_bracket", "helix")
E2E_NOISES = (0.0, 0.01, 0.05)
E2E_SCENES = 50


@pytest.fixture(scope="session")
def e2e_rows(tmp_path_factory):
    from keypose.bench import BenchmarkConfig, BenchObject, run_benchmark
    out = tmp_path_factory.mktemp("e2e")
    cfg = BenchmarkConfig(
        objects=tuple(BenchObject(n, f"builtin:{n}") for n in E2E_OBJECTS),
        scenes_per_object=E2E_SCENES,
        noise_levels=E2E_NOISES,
        methods=("oracle-c2f", "fpfh"),
        master_seed=2024,
    )
    t0 = time.perf_counter()
    rows = run_benchmark(cfg, out, workers=os.cpu_count())
    elapsed = time.perf_counter() - t0
    return rows, elapsed


def _cell_recall(rows, obj, method, noise):
    sel = [r for r in rows
           if r["object_id"] == obj and r["method"] == method
           and r["noise_level"] == noise]
    assert len(sel) == E2E_SCENES
    return sum(r["correct"] for r in sel) / len(sel)


def test_criterion_7_end_to_end_ordering(e2e_rows):
    rows, elapsed = e2e_rows
    assert len(rows) == len(E2E_OBJECTS) * E2E_SCENES * len(E2E_NOISES) * 2

    # (a) oracle + coarse-to-fine beats the classic FPFH pipeline per cell
    for obj in E2E_OBJECTS:
        for noise in E2E_NOISES:
            ours = _cell_recall(rows, obj, "oracle-c2f", noise)
            classic = _cell_recall(rows, obj, "fpfh", noise)
            assert ours >= classic, (
                f"{obj} @ noise {noise}: oracle {ours:.3f} < classic {classic:.3f}")

    # (b) recall non-increasing in noise, 0.05 slack, per cell
    for obj in E2E_OBJECTS:
        for method in ("oracle-c2f", "fpfh"):
            recalls = [_cell_recall(rows, obj, method, nz) for nz in E2E_NOISES]
            for lo, hi in zip(recalls, recalls[1:]):
                assert hi <= lo + 0.05, (
                    f"{obj}/{method}: recall rose with noise {recalls}")

    # (c) mean oracle recall at zero noise
    zero = [_cell_recall(rows, obj, "oracle-c2f", 0.0) for obj in E2E_OBJECTS]
    mean_zero = sum(zero) / len(zero)
    assert mean_zero >= 0.75, f"mean oracle recall at 0% noise = {mean_zero:.3f}"

    assert elapsed < 20 * 60, f"benchmark took {elapsed / 60:.1f} min"
    _report(7, "end-to-end ordering/monotonicity/recall",
            f"mean@0%={mean_zero:.3f}, {elapsed / 60:.1f} min")


def test_criterion_8_throughput_and_scaling(cube_model):
    rng = np.random.default_rng(1008)
    gt = random_pose(rng, t_norm_range=(0.05, 0.2))
    scene, corr = synthetic_correspondences(cube_model, gt, 0.30, rng)
    # pad to the stress size: 4096 correspondences on a 2048-point scene
    extra = 4096 - len(corr)
    pairs_s = np.concatenate([corr.scene_indices, rng.integers(0, len(scene), extra)])
    pairs_k = np.concatenate([corr.keypoint_indices,
                              rng.integers(0, len(cube_model.keypoint_indices), extra)])
    corr = CorrespondenceSet(pairs_s, pairs_k)
    assert len(corr) == 4096 and len(scene) == 2048
    cfg = RansacConfig(seed=8)

    ransac_coarse_to_fine(scene, cube_model, corr, cfg)  # warm the JIT

    def median_ms(workers, reps=15):
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            ransac_coarse_to_fine(scene, cube_model, corr, cfg, workers=workers)
            times.append((time.perf_counter() - t0) * 1000)
        return float(np.median(times))

    avail = min(os.cpu_count() or 1, numba.config.NUMBA_NUM_THREADS)
    med_max = median_ms(workers=min(8, avail))
    assert med_max < 100.0, f"median {med_max:.1f} ms"

    est_1 = ransac_coarse_to_fine(scene, cube_model, corr, cfg, workers=1)
    est_n = ransac_coarse_to_fine(scene, cube_model, corr, cfg, workers=min(8, avail))
    np.testing.assert_array_equal(est_1.pose.rotation, est_n.pose.rotation)
    np.testing.assert_array_equal(est_1.pose.translation, est_n.pose.translation)
    assert est_1.inlier_count == est_n.inlier_count

    if avail >= 8:
        t1 = median_ms(workers=1)
        t8 = median_ms(workers=8)
        assert t1 / t8 >= 3.0, f"scaling {t1 / t8:.2f}x"
        detail = f"median {med_max:.1f} ms, scaling {t1 / t8:.2f}x"
    else:
        t1 = median_ms(workers=1)
        detail = (f"median {med_max:.1f} ms, bit-identical across workers; "
                  f"scaling assertion needs 8 usable cores, have {avail} "
                  f"(1-worker median {t1:.1f} ms)")
    _report(8, "throughput <100 ms and worker-count independence", detail)


def test_criterion_9_fpfh_rigid_invariance():
    rng = np.random.default_rng(1009)
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(200, 400))
        cloud = PointCloud(random_cloud(rng, n, scale=0.5), random_unit_vectors(rng, n))
        t = random_pose(rng)
        a = compute_fpfh(cloud, radius=0.35)
        b = compute_fpfh(apply_transform(t, cloud), radius=0.35)
        worst = max(worst, float(np.max(np.abs(a.descriptors - b.descriptors))))
    assert worst < 1e-6, f"worst per-bin deviation {worst:.3g}"
    _report(9, "FPFH rigid invariance on 10 clouds", f"max dev {worst:.2g}")


def test_criterion_10_bench_determinism(tmp_path):
    cfg = {
        "objects": [{"name": "cube", "mesh": "builtin:cube"},
                    {"name": "helix", "mesh": "builtin:helix"}],
        "scenes_per_object": 3,
        "noise_levels": [0.0, 0.01],
        "methods": ["oracle-c2f", "fpfh"],
        "master_seed": 77,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))

    def run(out, workers):
        assert cli_main(["bench", "--config", str(cfg_path), "--out", str(out),
                         "--workers", str(workers)]) == 0
        lines = (out / "results.csv").read_text().splitlines()
        # strip the trailing timing column
        return ["," .join(line.split(",")[:-1]) for line in lines]

    a = run(tmp_path / "a", workers=2)
    b = run(tmp_path / "b", workers=1)
    assert a == b
    _report(10, "cmd_bench byte-identical modulo timing columns",
            f"{len(a) - 1} rows, workers 2 vs 1")
