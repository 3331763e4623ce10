"""Command-line surface: model / scenegen / estimate / bench / eval.

Exit codes: 0 success, 1 usage, 2 I/O or parse failure, 3 degenerate input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .bench import (
    BenchmarkConfig,
    load_config,
    resolve_mesh,
    run_benchmark,
    summarize,
)
from .geometry import DegenerateInputError
from .matchgen import DEFAULT_VOTE_THRESHOLD, OracleSpec
from .meshio import MeshParseError
from .metrics import read_results_csv
from .pipeline import METHODS, ObjectFeatures, apply_scene_noise, estimate_scene
from .sampling import DEFAULT_KEYPOINTS, build_object_model, load_object_model, save_object_model
from .scenegen import BinSpec, generate_scene_sample, load_scene_sample, save_scene_sample
from .seeding import derive_seed
from .solver import RansacConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DEGENERATE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_model(path):
    """Accept a model directory or an explicit .ply path (sidecar: same stem .json)."""
    if os.path.isdir(path):
        return load_object_model(os.path.join(path, "model.ply"),
                                 os.path.join(path, "model.json"))
    base, _ = os.path.splitext(path)
    return load_object_model(path, base + ".json")


def cmd_model(args) -> int:
    mesh = resolve_mesh(args.mesh)
    model = build_object_model(mesh, k_keypoints=args.keypoints, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    save_object_model(model, os.path.join(args.out, "model.ply"),
                      os.path.join(args.out, "model.json"))
    print(f"model: {len(model.cloud)} points, {len(model.keypoint_indices)} keypoints, "
          f"diameter {model.diameter:.6f} -> {args.out}")
    return EXIT_OK


def cmd_scenegen(args) -> int:
    model = _load_model(args.model)
    if args.bin_width is not None:
        bin_spec = BinSpec(width=args.bin_width, depth=args.bin_depth or args.bin_width,
                           height=args.bin_height or args.bin_width / 2.0)
    else:
        bin_spec = BinSpec.for_object(model.diameter)
    lo, hi = args.instances_min, args.instances_max
    if not 1 <= lo <= hi <= 20:
        raise UsageError("instance counts must satisfy 1 <= min <= max <= 20")
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        n_inst = lo + i % (hi - lo + 1)
        seed = derive_seed(args.seed, "scene", i)
        sample = generate_scene_sample(model, bin_spec, n_inst, seed=seed)
        save_scene_sample(os.path.join(args.out, f"{i:04d}"), sample, seed=seed)
    print(f"wrote {args.count} scenes -> {args.out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    sample = load_scene_sample(args.scene)
    model = _load_model(args.model)
    features = ObjectFeatures.build(model)
    if args.noise > 0.0:
        sample = apply_scene_noise(sample, model, args.noise,
                                   seed=derive_seed(args.seed, "noise"))
    oracle = OracleSpec(seg_accuracy=args.seg_accuracy,
                        keypoint_accuracy=args.keypoint_accuracy,
                        temperature=args.temperature,
                        seed=derive_seed(args.seed, "oracle"))
    ransac = RansacConfig(n_hypotheses=args.hypotheses,
                          seed=derive_seed(args.seed, "ransac"))
    outcome = estimate_scene(sample, features, args.method, oracle, ransac,
                             vote_threshold=args.vote_threshold, workers=args.workers)
    payload = outcome.estimate.to_json_dict()
    payload["match_ms"] = outcome.match_ms
    payload["ransac_ms"] = outcome.ransac_ms
    text = json.dumps(payload)
    if args.out:
        with open(args.out, "w", encoding="ascii") as f:
            f.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        base_dir = os.path.dirname(os.path.abspath(args.config))
    else:
        cfg = BenchmarkConfig()
        base_dir = None
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, master_seed=args.seed)
    rows = run_benchmark(cfg, args.out, workers=args.workers, resume=args.resume,
                         base_dir=base_dir)
    print(summarize(rows))
    return EXIT_OK


def cmd_eval(args) -> int:
    rows = read_results_csv(args.results)
    text = summarize(rows)
    if args.out:
        with open(args.out, "w", encoding="ascii") as f:
            f.write(text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="keypose",
                description="Keypoint-matching 6D pose estimation pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("model", help="build an object model from a mesh")
    m.add_argument("--mesh", required=True,
                   help="mesh path (.obj/.ply) or builtin:<cube|cylinder|sphere|l_bracket|helix>")
    m.add_argument("--keypoints", type=int, default=DEFAULT_KEYPOINTS)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True, help="output directory (model.ply + model.json)")
    m.set_defaults(func=cmd_model)

    s = sub.add_parser("scenegen", help="generate a synthetic bin-scene dataset")
    s.add_argument("--model", required=True, help="model directory or model.ply path")
    s.add_argument("--count", type=int, default=160)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--instances-min", type=int, default=1)
    s.add_argument("--instances-max", type=int, default=20)
    s.add_argument("--bin-width", type=float, default=None)
    s.add_argument("--bin-depth", type=float, default=None)
    s.add_argument("--bin-height", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scenegen)

    e = sub.add_parser("estimate", help="estimate the target pose in one scene")
    e.add_argument("--scene", required=True, help="scene directory (cloud.ply, gt.json, mask.csv)")
    e.add_argument("--model", required=True)
    e.add_argument("--method", choices=METHODS, default="oracle-c2f")
    e.add_argument("--noise", type=float, default=0.0,
                   help="Gaussian noise sigma as a fraction of object diameter")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--vote-threshold", type=float, default=DEFAULT_VOTE_THRESHOLD)
    e.add_argument("--seg-accuracy", type=float, default=OracleSpec().seg_accuracy)
    e.add_argument("--keypoint-accuracy", type=float, default=OracleSpec().keypoint_accuracy)
    e.add_argument("--temperature", type=float, default=OracleSpec().temperature)
    e.add_argument("--hypotheses", type=int, default=RansacConfig().n_hypotheses)
    e.add_argument("--workers", type=int, default=None)
    e.add_argument("--out", default=None, help="write the pose JSON here as well as stdout")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bench", help="run the benchmark grid")
    b.add_argument("--config", default=None, help="benchmark config JSON (defaults if omitted)")
    b.add_argument("--out", required=True, help="output directory (results.csv, summary.txt)")
    b.add_argument("--seed", type=int, default=None, help="override the master seed")
    b.add_argument("--workers", type=int, default=None)
    b.add_argument("--resume", action="store_true", help="skip completed scene cells")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("eval", help="summarize a results CSV")
    v.add_argument("--results", required=True)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateInputError as e:
        print(f"degenerate input: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except MeshParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as e:
        print(f"bad JSON: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, ValueError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
