"""Benchmark grid: objects x scenes x noise levels x methods.

Object features are computed once per object and reused for every scene.
Scenes are generated and solved in a process pool; rows are keyed by
(object, scene, noise, method) and always written in canonical grid order,
so the CSV is byte-identical across runs, worker counts, and resume
patterns (timing columns aside). All randomness derives from the master
seed via labeled seed paths.
"""

from __future__ import annotations

import json
import multiprocessing
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .geometry import TriangleMesh
from .matchgen import DEFAULT_VOTE_THRESHOLD, OracleSpec
from .meshes import builtin_mesh
from .meshio import read_mesh
from .metrics import DEFAULT_ADI_TAU, evaluate_pose, read_results_csv, write_results_csv
from .pipeline import METHODS, ObjectFeatures, apply_scene_noise, estimate_scene
from .sampling import DEFAULT_KEYPOINTS, build_object_model
from .scenegen import BinSpec, generate_scene_sample
from .seeding import derive_seed
from .solver import RansacConfig


@dataclass(frozen=True)
class BenchObject:
    name: str
    mesh: str  # file path or "builtin:<name>"


DEFAULT_OBJECTS = tuple(
    BenchObject(name=n, mesh=f"builtin:{n}")
    for n in ("cube", "cylinder", "sphere", "l_bracket", "helix")
)


@dataclass(frozen=True)
class BenchmarkConfig:
    objects: tuple[BenchObject, ...] = DEFAULT_OBJECTS
    scenes_per_object: int = 100
    instance_range: tuple[int, int] = (1, 20)
    noise_levels: tuple[float, ...] = (0.0, 0.01, 0.05)
    methods: tuple[str, ...] = METHODS
    keypoints: int = DEFAULT_KEYPOINTS
    vote_threshold: float = DEFAULT_VOTE_THRESHOLD
    adi_tau: float = DEFAULT_ADI_TAU
    oracle: OracleSpec = OracleSpec()
    ransac: RansacConfig = RansacConfig()
    master_seed: int = 0

    def __post_init__(self):
        if not self.objects:
            raise ValueError("object list must be non-empty")
        if any(level < 0.0 for level in self.noise_levels):
            raise ValueError("noise levels must be >= 0")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; expected subset of {METHODS}")
        lo, hi = self.instance_range
        if not 1 <= lo <= hi <= 20:
            raise ValueError("instance_range must satisfy 1 <= lo <= hi <= 20")
        if self.scenes_per_object < 1:
            raise ValueError("scenes_per_object must be >= 1")


def load_config(path) -> BenchmarkConfig:
    with open(path, "r", encoding="ascii") as f:
        raw = json.load(f)
    kwargs = {}
    if "objects" in raw:
        kwargs["objects"] = tuple(BenchObject(o["name"], o["mesh"]) for o in raw["objects"])
    for key in ("scenes_per_object", "keypoints", "master_seed"):
        if key in raw:
            kwargs[key] = int(raw[key])
    for key in ("vote_threshold", "adi_tau"):
        if key in raw:
            kwargs[key] = float(raw[key])
    if "instance_range" in raw:
        kwargs["instance_range"] = tuple(int(v) for v in raw["instance_range"])
    if "noise_levels" in raw:
        kwargs["noise_levels"] = tuple(float(v) for v in raw["noise_levels"])
    if "methods" in raw:
        kwargs["methods"] = tuple(raw["methods"])
    if "oracle" in raw:
        kwargs["oracle"] = OracleSpec(**raw["oracle"])
    if "ransac" in raw:
        r = dict(raw["ransac"])
        if "shrink_divisors" in r:
            r["shrink_divisors"] = tuple(r["shrink_divisors"])
        kwargs["ransac"] = RansacConfig(**r)
    return BenchmarkConfig(**kwargs)


def resolve_mesh(spec: str, base_dir=None) -> TriangleMesh:
    if spec.startswith("builtin:"):
        return builtin_mesh(spec.split(":", 1)[1])
    path = spec
    if base_dir is not None and not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    return read_mesh(path)


def _instance_count(cfg: BenchmarkConfig, scene_id: int) -> int:
    lo, hi = cfg.instance_range
    return lo + scene_id % (hi - lo + 1)


def _run_scene_task(args):
    """One (object, scene) unit: generate once, solve every noise x method."""
    cfg, name, features, bin_spec, scene_id, solver_workers = args
    model = features.model
    rows = []
    try:
        sample = generate_scene_sample(
            model, bin_spec, _instance_count(cfg, scene_id),
            seed=derive_seed(cfg.master_seed, "scene", name, scene_id))
        for noise in cfg.noise_levels:
            noised = apply_scene_noise(
                sample, model, noise,
                seed=derive_seed(cfg.master_seed, "noise", name, scene_id, noise))
            for method in cfg.methods:
                oracle = replace(cfg.oracle, seed=derive_seed(
                    cfg.master_seed, "oracle", name, scene_id, noise))
                ransac = replace(cfg.ransac, seed=derive_seed(
                    cfg.master_seed, "ransac", name, scene_id, noise, method))
                outcome = estimate_scene(noised, features, method, oracle, ransac,
                                         cfg.vote_threshold, workers=solver_workers)
                ev = evaluate_pose(outcome.estimate.pose, sample.gt_pose, model.cloud,
                                   model.diameter, tau=cfg.adi_tau)
                failed = outcome.estimate.inlier_count == 0
                rows.append({
                    "object_id": name,
                    "scene_id": scene_id,
                    "noise_level": noise,
                    "method": method,
                    "adi": ev.adi,
                    "add": ev.add,
                    "correct": ev.correct and not failed,
                    "runtime_ms": outcome.match_ms + outcome.ransac_ms,
                })
        return rows, None
    except Exception:
        return rows, f"scene {name}/{scene_id}: {traceback.format_exc()}"


def prepare_objects(cfg: BenchmarkConfig, base_dir=None):
    """Build models + object features once per object (the offline stage)."""
    prepared = []
    for obj in cfg.objects:
        mesh = resolve_mesh(obj.mesh, base_dir)
        model = build_object_model(
            mesh, cfg.keypoints, seed=derive_seed(cfg.master_seed, "model", obj.name))
        features = ObjectFeatures.build(model)
        prepared.append((obj.name, features, BinSpec.for_object(model.diameter)))
    return prepared


def run_benchmark(
    cfg: BenchmarkConfig,
    out_dir,
    workers: int | None = None,
    resume: bool = False,
    base_dir=None,
    log=lambda msg: print(msg, file=sys.stderr),
) -> list[dict]:
    """Execute the grid and write results.csv + summary.txt under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    results_path = os.path.join(out_dir, "results.csv")
    rows_per_scene = len(cfg.noise_levels) * len(cfg.methods)

    done: dict[tuple, dict] = {}
    complete_scenes: set[tuple[str, int]] = set()
    if resume and os.path.exists(results_path):
        counts: dict[tuple[str, int], int] = {}
        for row in read_results_csv(results_path):
            done[(row["object_id"], row["scene_id"], row["noise_level"], row["method"])] = row
            key = (row["object_id"], row["scene_id"])
            counts[key] = counts.get(key, 0) + 1
        complete_scenes = {k for k, v in counts.items() if v >= rows_per_scene}
        log(f"resume: {len(complete_scenes)} scene cells already complete")

    prepared = prepare_objects(cfg, base_dir)
    if workers is None:
        workers = os.cpu_count() or 1
    solver_workers = 1 if workers > 1 else None

    tasks = []
    for name, features, bin_spec in prepared:
        for scene_id in range(cfg.scenes_per_object):
            if (name, scene_id) in complete_scenes:
                continue
            tasks.append((cfg, name, features, bin_spec, scene_id, solver_workers))

    new_rows: list[dict] = []
    if tasks:
        if workers > 1:
            # spawn, not fork: the parent may have initialized numba's
            # threading layer, and forking an OpenMP runtime deadlocks
            ctx = multiprocessing.get_context("spawn")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                outcomes = list(pool.map(_run_scene_task, tasks, chunksize=1))
        else:
            outcomes = [_run_scene_task(t) for t in tasks]
        for rows, error in outcomes:
            new_rows.extend(rows)
            if error is not None:
                log(f"benchmark cell failed (skipped): {error}")

    for row in new_rows:
        done[(row["object_id"], row["scene_id"], row["noise_level"], row["method"])] = row

    ordered = []
    for name, _, _ in prepared:
        for scene_id in range(cfg.scenes_per_object):
            for noise in cfg.noise_levels:
                for method in cfg.methods:
                    row = done.get((name, scene_id, noise, method))
                    if row is not None:
                        ordered.append(row)

    write_results_csv(results_path, ordered)
    summary = summarize(ordered)
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="ascii") as f:
        f.write(summary + "\n")
    return ordered


def summarize(rows: list[dict]) -> str:
    """Recall grid per object x method x noise, plus mean recall and timings."""
    if not rows:
        return "no results"
    objects = sorted({r["object_id"] for r in rows})
    methods = sorted({r["method"] for r in rows})
    noises = sorted({r["noise_level"] for r in rows})

    def cell_recall(obj, method, noise):
        sel = [r for r in rows
               if r["object_id"] == obj and r["method"] == method and r["noise_level"] == noise]
        if not sel:
            return None
        return sum(r["correct"] for r in sel) / len(sel)

    lines = []
    header = "method      noise  " + "  ".join(f"{o:>10s}" for o in objects) + "        mean"
    lines.append(header)
    lines.append("-" * len(header))
    for method in methods:
        for noise in noises:
            cells = [cell_recall(o, method, noise) for o in objects]
            shown = [f"{c:10.3f}" if c is not None else " " * 10 for c in cells]
            usable = [c for c in cells if c is not None]
            mean = sum(usable) / len(usable) if usable else float("nan")
            lines.append(f"{method:<10s} {noise:6.3f}  " + "  ".join(shown) + f"  {mean:10.3f}")
    lines.append("")
    for method in methods:
        times = np.asarray([r["runtime_ms"] for r in rows if r["method"] == method])
        if times.size:
            lines.append(
                f"{method:<14s} runtime_ms p50={np.percentile(times, 50):8.2f}  "
                f"p90={np.percentile(times, 90):8.2f}  n={times.size}")
    return "\n".join(lines)
