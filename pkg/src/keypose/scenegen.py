"""Synthetic homogeneous-bin scenes with exact ground truth.

A scene is built physics-free: instance poses are drawn with uniform random
rotations and positions inside the bin, rejected until bounding spheres are
separated; the union of the bin surface and the transformed instances is
passed through an angular z-buffer standing in for a depth camera. Training
crops are produced the way the deployment protocol prescribes: remove the
known bin, draw a random object point, keep everything within one object
diameter, re-center on the drawn point, and resample to a fixed cardinality.

Scenes and poses live in the camera frame (camera at the origin, +z into
the bin), so normals oriented toward the camera are consistent with
transformed model normals on visible surfaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import meshio
from .geometry import (
    DegenerateInputError,
    FloatArray,
    PointCloud,
    RigidTransform,
    apply_transform,
    random_rotation,
)
from .sampling import ObjectModel
from .seeding import derive_seed, rng_for
from .spatial import mean_nn_spacing

MAX_INSTANCES = 20
DEFAULT_PIXEL_ANGLE = np.deg2rad(0.2)
SCENE_CLOUD_SIZE = 2048
PLACEMENT_ATTEMPTS = 1000
SPHERE_SEPARATION = 0.8          # accepted when gap >= 0.8 * (r_i + r_j)
BIN_REMOVE_SPACING_FACTOR = 2.0  # bin points: closer than 2x spacing to the shell
OWNER_SPACING_FACTOR = 3.0       # object points: within 3x spacing of an instance


@dataclass(frozen=True)
class BinSpec:
    """Inner bin geometry plus the camera pose (world -> camera)."""

    width: float
    depth: float
    height: float
    wall_thickness: float = 0.01
    camera: RigidTransform | None = None
    surface_spacing: float | None = None

    def __post_init__(self):
        if min(self.width, self.depth, self.height, self.wall_thickness) <= 0.0:
            raise ValueError("bin dimensions must be positive")
        if self.camera is None:
            # Straight-down camera well above the bin opening.
            cam_z = self.height + 2.0 * max(self.width, self.depth)
            rot = np.diag([1.0, -1.0, -1.0])
            object.__setattr__(
                self, "camera", RigidTransform(rot, -rot @ np.array([0.0, 0.0, cam_z])))
        view_dir_world = self.camera.rotation.T @ np.array([0.0, 0.0, 1.0])
        if view_dir_world[2] >= 0.0:
            raise ValueError("camera must look down into the bin")

    @staticmethod
    def for_object(diameter: float) -> "BinSpec":
        return BinSpec(
            width=4.0 * diameter,
            depth=4.0 * diameter,
            height=2.0 * diameter,
            wall_thickness=0.1 * diameter,
        )


@dataclass(frozen=True)
class SceneSample:
    """One training/evaluation crop with its ground truth."""

    cropped_cloud: PointCloud
    instance_mask: np.ndarray          # (N,) bool, target instance membership
    gt_pose: RigidTransform            # target instance, cropped/centered frame
    all_poses: tuple[RigidTransform, ...]
    n_instances: int
    target_index: int

    def __post_init__(self):
        mask = np.array(self.instance_mask, dtype=bool, copy=True)
        if mask.shape[0] != len(self.cropped_cloud):
            raise ValueError("instance_mask length must match cloud size")
        if not 1 <= self.n_instances <= MAX_INSTANCES:
            raise ValueError(f"n_instances must be in [1, {MAX_INSTANCES}]")
        if len(self.all_poses) != self.n_instances:
            raise ValueError("all_poses length must equal n_instances")
        if not 0 <= self.target_index < self.n_instances:
            raise ValueError("target_index out of range")
        gt = self.all_poses[self.target_index]
        if not (np.array_equal(gt.rotation, self.gt_pose.rotation)
                and np.array_equal(gt.translation, self.gt_pose.translation)):
            raise ValueError("gt_pose must be all_poses[target_index]")
        mask.setflags(write=False)
        object.__setattr__(self, "instance_mask", mask)


def _bin_surface_cloud(spec: BinSpec, spacing: float) -> PointCloud:
    """Grid samples of the camera-facing bin shell: floor, inner walls, rim."""
    w, d, h, t = spec.width, spec.depth, spec.height, spec.wall_thickness

    def grid(lo_a, hi_a, lo_b, hi_b):
        na = max(2, int(np.ceil((hi_a - lo_a) / spacing)) + 1)
        nb = max(2, int(np.ceil((hi_b - lo_b) / spacing)) + 1)
        a, b = np.meshgrid(np.linspace(lo_a, hi_a, na), np.linspace(lo_b, hi_b, nb))
        return a.ravel(), b.ravel()

    pts, nrm = [], []

    def add(points, normal):
        pts.append(points)
        nrm.append(np.tile(normal, (points.shape[0], 1)))

    x, y = grid(-w / 2, w / 2, -d / 2, d / 2)
    add(np.column_stack([x, y, np.zeros_like(x)]), (0.0, 0.0, 1.0))       # floor
    x, z = grid(-w / 2, w / 2, 0.0, h)
    add(np.column_stack([x, np.full_like(x, -d / 2), z]), (0.0, 1.0, 0.0))
    add(np.column_stack([x, np.full_like(x, d / 2), z]), (0.0, -1.0, 0.0))
    y, z = grid(-d / 2, d / 2, 0.0, h)
    add(np.column_stack([np.full_like(y, -w / 2), y, z]), (1.0, 0.0, 0.0))
    add(np.column_stack([np.full_like(y, w / 2), y, z]), (-1.0, 0.0, 0.0))
    # rim ring at the opening
    x, e = grid(-w / 2 - t, w / 2 + t, 0.0, t)
    add(np.column_stack([x, -d / 2 - e, np.full_like(x, h)]), (0.0, 0.0, 1.0))
    add(np.column_stack([x, d / 2 + e, np.full_like(x, h)]), (0.0, 0.0, 1.0))
    y, e = grid(-d / 2, d / 2, 0.0, t)
    add(np.column_stack([-w / 2 - e, y, np.full_like(y, h)]), (0.0, 0.0, 1.0))
    add(np.column_stack([w / 2 + e, y, np.full_like(y, h)]), (0.0, 0.0, 1.0))

    return PointCloud(np.vstack(pts), np.vstack(nrm))


def bin_surface_distance(spec: BinSpec, points_world: FloatArray) -> FloatArray:
    """Distance from world-frame points to the sampled bin shell surfaces."""
    w, d, h, t = spec.width, spec.depth, spec.height, spec.wall_thickness

    def rect_distance(pts, lo, hi):
        clamped = np.clip(pts, lo, hi)
        return np.linalg.norm(pts - clamped, axis=1)

    p = np.asarray(points_world, dtype=np.float64)
    dists = [
        rect_distance(p, (-w / 2, -d / 2, 0.0), (w / 2, d / 2, 0.0)),       # floor
        rect_distance(p, (-w / 2, -d / 2, 0.0), (w / 2, -d / 2, h)),        # walls
        rect_distance(p, (-w / 2, d / 2, 0.0), (w / 2, d / 2, h)),
        rect_distance(p, (-w / 2, -d / 2, 0.0), (-w / 2, d / 2, h)),
        rect_distance(p, (w / 2, -d / 2, 0.0), (w / 2, d / 2, h)),
        # rim: four strips framing the opening (the mouth itself is open)
        rect_distance(p, (-w / 2 - t, -d / 2 - t, h), (w / 2 + t, -d / 2, h)),
        rect_distance(p, (-w / 2 - t, d / 2, h), (w / 2 + t, d / 2 + t, h)),
        rect_distance(p, (-w / 2 - t, -d / 2, h), (-w / 2, d / 2, h)),
        rect_distance(p, (w / 2, -d / 2, h), (w / 2 + t, d / 2, h)),
    ]
    return np.min(dists, axis=0)


def _visible_indices(cloud: PointCloud, pixel_angle: float, depth_band: float) -> np.ndarray:
    pts = cloud.points
    front = pts[:, 2] > 0.0
    idx = np.nonzero(front)[0]
    if idx.size == 0:
        return idx
    p = pts[idx]
    u = np.arctan2(p[:, 0], p[:, 2])
    v = np.arctan2(p[:, 1], p[:, 2])
    iu = np.floor(u / pixel_angle).astype(np.int64)
    iv = np.floor(v / pixel_angle).astype(np.int64)
    # angles lie in (-pi/2, pi/2) for z > 0, so |cell index| < pi/(2*pixel_angle) << 2^20
    key = (iu + (1 << 20)) * (1 << 21) + (iv + (1 << 20))
    _, inverse = np.unique(key, return_inverse=True)
    depth = np.linalg.norm(p, axis=1)
    nearest = np.full(int(inverse.max()) + 1, np.inf)
    np.minimum.at(nearest, inverse, depth)
    keep = depth <= nearest[inverse] + depth_band
    return idx[keep]


def visibility_filter(
    cloud: PointCloud,
    camera: RigidTransform | None = None,
    pixel_angle: float = DEFAULT_PIXEL_ANGLE,
    depth_band: float | None = None,
) -> PointCloud:
    """Angular z-buffer: keep the nearest point per pixel cell (plus a depth band).

    `camera` maps the cloud's frame into the camera frame; None means the
    cloud is already camera-frame (camera at origin, looking +z). The result
    stays in the input frame. The default depth band is twice the cloud's
    median nearest-neighbor spacing, so co-surface points sharing a cell are
    not culled.
    """
    if len(cloud) == 0:
        return cloud
    cam_cloud = cloud if camera is None else apply_transform(camera, cloud)
    if depth_band is None:
        if len(cloud) > 1:
            dd, _ = cKDTree(cam_cloud.points).query(cam_cloud.points, k=2)
            depth_band = 2.0 * float(np.median(dd[:, 1]))
        else:
            depth_band = 0.0
    keep = _visible_indices(cam_cloud, pixel_angle, depth_band)
    return cloud.select(keep)


def sample_bin_scene(
    model: ObjectModel,
    bin_spec: BinSpec,
    n_instances: int,
    seed: int = 0,
    pixel_angle: float = DEFAULT_PIXEL_ANGLE,
    apply_visibility: bool = True,
) -> tuple[PointCloud, list[RigidTransform]]:
    """Place n_instances in the bin and return the camera-frame scene cloud.

    Poses are uniform random rotations with bounding spheres kept inside the
    bin and pairwise separated by 0.8 * (r_i + r_j); after 1000 failed
    rejection rounds the instances are stacked vertically instead. The
    returned poses map the model frame into the camera frame.
    """
    if not 1 <= n_instances <= MAX_INSTANCES:
        raise ValueError(f"n_instances must be in [1, {MAX_INSTANCES}]")
    rng = rng_for(seed, "binscene")

    centroid = model.cloud.points.mean(axis=0)
    radius = float(np.max(np.linalg.norm(model.cloud.points - centroid, axis=1)))
    lo = np.array([-bin_spec.width / 2 + radius, -bin_spec.depth / 2 + radius, radius])
    hi = np.array([bin_spec.width / 2 - radius, bin_spec.depth / 2 - radius,
                   bin_spec.height - radius])
    if np.any(lo > hi):
        raise DegenerateInputError("object larger than bin")

    min_gap = SPHERE_SEPARATION * 2.0 * radius
    centers: list[np.ndarray] = []
    rotations: list[np.ndarray] = []
    stacked = False
    for _ in range(n_instances):
        placed = False
        for _attempt in range(PLACEMENT_ATTEMPTS):
            c = rng.uniform(lo, hi)
            if all(np.linalg.norm(c - prev) >= min_gap for prev in centers):
                centers.append(c)
                rotations.append(random_rotation(rng))
                placed = True
                break
        if not placed:
            stacked = True
            break
    if stacked:
        # Escape hatch: vertical column, ignoring the bin height.
        centers = [np.array([0.0, 0.0, radius + i * min_gap]) for i in range(n_instances)]
        rotations = [random_rotation(rng) for _ in range(n_instances)]

    spacing = bin_spec.surface_spacing
    if spacing is None:
        spacing = 2.0 * mean_nn_spacing(model.cloud)
    bin_cloud = _bin_surface_cloud(bin_spec, spacing)

    cam = bin_spec.camera
    poses_world = [RigidTransform(rot, c - rot @ centroid) for rot, c in zip(rotations, centers)]
    poses_cam = [cam @ p for p in poses_world]

    parts_pts = [cam.apply_points(bin_cloud.points)]
    parts_nrm = [cam.apply_directions(bin_cloud.normals)]
    for pose in poses_cam:
        parts_pts.append(pose.apply_points(model.cloud.points))
        parts_nrm.append(pose.apply_directions(model.cloud.normals))
    scene = PointCloud(np.vstack(parts_pts), np.vstack(parts_nrm))

    if apply_visibility:
        scene = visibility_filter(scene, camera=None, pixel_angle=pixel_angle,
                                  depth_band=2.0 * spacing)
    return scene, poses_cam


def crop_and_center(
    scene: PointCloud,
    poses: list[RigidTransform],
    model: ObjectModel,
    seed: int = 0,
    bin_spec: BinSpec | None = None,
    target_size: int = SCENE_CLOUD_SIZE,
) -> SceneSample:
    """Diameter-radius crop around a random object point, centered on it.

    Bin points are removed by distance to the known bin shell; a seed point
    is drawn among the remaining object points, every remaining point within
    one model diameter is kept, the crop is translated so the seed point is
    the origin and resampled to exactly target_size points. The mask marks
    the instance owning the seed point (nearest-instance assignment).
    """
    if len(scene) == 0:
        raise DegenerateInputError("empty scene")
    if not poses:
        raise ValueError("poses must be non-empty")
    spacing = mean_nn_spacing(model.cloud)

    if bin_spec is not None:
        world_pts = bin_spec.camera.inverse().apply_points(scene.points)
        keep = bin_surface_distance(bin_spec, world_pts) >= BIN_REMOVE_SPACING_FACTOR * spacing
        remaining_idx = np.nonzero(keep)[0]
    else:
        remaining_idx = np.arange(len(scene))
    if remaining_idx.size == 0:
        raise DegenerateInputError("no object points visible")
    pts = scene.points[remaining_idx]

    # nearest-instance assignment via one tree over all transformed instances
    all_inst = np.vstack([pose.apply_points(model.cloud.points) for pose in poses])
    labels = np.repeat(np.arange(len(poses)), len(model.cloud))
    owner_d, nn = cKDTree(all_inst).query(pts)
    owner = labels[nn]
    is_object = owner_d < OWNER_SPACING_FACTOR * spacing
    candidates = np.nonzero(is_object)[0]
    if candidates.size == 0:
        raise DegenerateInputError("no object points visible")

    rng = rng_for(seed, "crop")
    pick = int(candidates[rng.integers(candidates.size)])
    center = pts[pick]
    target = int(owner[pick])

    in_crop = np.nonzero(np.linalg.norm(pts - center, axis=1) <= model.diameter)[0]
    m = in_crop.size
    if m >= target_size:
        chosen = in_crop[rng.choice(m, size=target_size, replace=False)]
    else:
        extra = in_crop[rng.choice(m, size=target_size - m, replace=True)]
        chosen = np.concatenate([in_crop, extra])

    crop_points = pts[chosen] - center
    normals = scene.normals[remaining_idx][chosen] if scene.normals is not None else None
    mask = (owner[chosen] == target) & is_object[chosen]

    recenter = RigidTransform.from_translation(-center)
    all_poses = tuple(recenter @ pose for pose in poses)
    return SceneSample(
        cropped_cloud=PointCloud(crop_points, normals),
        instance_mask=mask,
        gt_pose=all_poses[target],
        all_poses=all_poses,
        n_instances=len(poses),
        target_index=target,
    )


def generate_scene_sample(
    model: ObjectModel,
    bin_spec: BinSpec,
    n_instances: int,
    seed: int = 0,
    target_size: int = SCENE_CLOUD_SIZE,
) -> SceneSample:
    """Full scene pipeline: placement + visibility + crop, one seed."""
    scene, poses = sample_bin_scene(model, bin_spec, n_instances,
                                    seed=derive_seed(seed, "scene"))
    return crop_and_center(scene, poses, model, seed=derive_seed(seed, "crop"),
                           bin_spec=bin_spec, target_size=target_size)


def save_scene_sample(directory, sample: SceneSample, seed: int = 0) -> None:
    """Dataset layout: cloud.ply + gt.json + mask.csv in one directory."""
    import os
    os.makedirs(directory, exist_ok=True)
    meshio.write_ply(os.path.join(directory, "cloud.ply"), sample.cropped_cloud)
    gt = {
        "target_pose": sample.gt_pose.to_dict(),
        "all_poses": [p.to_dict() for p in sample.all_poses],
        "n_instances": sample.n_instances,
        "target_index": sample.target_index,
        "seed": seed,
    }
    with open(os.path.join(directory, "gt.json"), "w", encoding="ascii") as f:
        json.dump(gt, f)
        f.write("\n")
    with open(os.path.join(directory, "mask.csv"), "w", encoding="ascii") as f:
        f.write("mask\n")
        for v in sample.instance_mask:
            f.write(f"{int(v)}\n")


def load_scene_sample(directory) -> SceneSample:
    import os
    cloud = meshio.read_ply(os.path.join(directory, "cloud.ply"))
    with open(os.path.join(directory, "gt.json"), "r", encoding="ascii") as f:
        gt = json.load(f)
    with open(os.path.join(directory, "mask.csv"), "r", encoding="ascii") as f:
        lines = f.read().splitlines()
    mask = np.asarray([int(v) for v in lines[1:]], dtype=bool)
    all_poses = tuple(RigidTransform.from_dict(d) for d in gt["all_poses"])
    target = int(gt["target_index"])
    return SceneSample(
        cropped_cloud=cloud,
        instance_mask=mask,
        gt_pose=all_poses[target],
        all_poses=all_poses,
        n_instances=int(gt["n_instances"]),
        target_index=target,
    )
