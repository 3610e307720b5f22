"""Dataset assembly: splits, image masking, patching, and manifests.

Two modes produce pose-estimation datasets. Rendered mode orbits each tree's
cropped scene along a trajectory and emits novel RGB-D views with labels.
Original mode takes captured images plus their cameras, renders full and
per-tree depth, masks out everything that is not the target tree (or is
occluded by another tree), cuts the masked image into patches with shifted
principal points, and emits per-patch labels with occlusion recomputed for
the patch camera.

Splits are per tree, so a fruit can never appear in two splits. Each split
directory holds images/, depth/, labels.jsonl and manifest.json; the manifest
is written last via an atomic rename. If a build dies partway, an
_INCOMPLETE marker is left behind.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .annotate import (
    FruitNotVisibleError,
    build_fruit_pose,
    compute_occlusion,
    fruit_in_view,
    project_label,
    read_labels_jsonl,
    write_labels_jsonl,
)
from .cameras import generate_patch_grid, generate_trajectory, patch_camera
from .evaluate import ZERO_ORIENTATION_AXIS
from .render import DepthImage, RgbImage, render_scene, write_sidecar
from .splats import crop_scene

MASK_DEPTH_EPS_M = 0.005
SPLIT_NAMES = ("train", "val", "test")
INCOMPLETE_MARKER = "_INCOMPLETE"


def load_split_config(path) -> dict:
    """tree_id -> split name; every tree must map to train, val, or test."""
    data = json.loads(Path(path).read_text())
    return validate_split_config(data)


def validate_split_config(mapping) -> dict:
    for tree_id, split in mapping.items():
        if split not in SPLIT_NAMES:
            raise ValueError(f"tree {tree_id!r} assigned to unknown split {split!r}")
    return dict(mapping)


def save_split_config(path, mapping):
    Path(path).write_text(json.dumps(validate_split_config(mapping), indent=2))


@dataclass
class ImageRecord:
    rgb: str
    depth: str
    camera_id: str
    source: str  # "original" or "rendered"
    label_count: int


@dataclass
class DatasetManifest:
    split: str
    mode: str
    occlusion_limit: float
    images: list = field(default_factory=list)
    label_file: str = "labels.jsonl"
    counts: dict = field(default_factory=dict)
    conventions: dict = field(default_factory=dict)
    path: Path | None = None

    def finalize(self):
        self.counts = {
            "images": len(self.images),
            "labels": sum(rec.label_count for rec in self.images),
        }

    def to_dict(self):
        return {
            "split": self.split,
            "mode": self.mode,
            "occlusion_limit": self.occlusion_limit,
            "label_file": self.label_file,
            "counts": self.counts,
            "conventions": self.conventions,
            "images": [
                {
                    "rgb": rec.rgb,
                    "depth": rec.depth,
                    "camera_id": rec.camera_id,
                    "source": rec.source,
                    "label_count": rec.label_count,
                }
                for rec in self.images
            ],
        }


def _default_conventions():
    return {
        "camera_frame": "z-forward,y-down",
        "fruit_in_view_rule": "any-point-in-frustum",
        "depth_png": "uint16 millimeters, 0 = no data",
        "zero_orientation_axis": ZERO_ORIENTATION_AXIS.tolist(),
    }


def save_manifest(path, manifest: DatasetManifest):
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".manifest.tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(manifest.to_dict(), fh, indent=2)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    manifest.path = path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    d = json.loads(path.read_text())
    manifest = DatasetManifest(
        split=d["split"],
        mode=d["mode"],
        occlusion_limit=d["occlusion_limit"],
        label_file=d.get("label_file", "labels.jsonl"),
        counts=d.get("counts", {}),
        conventions=d.get("conventions", {}),
        path=path,
    )
    manifest.images = [ImageRecord(**rec) for rec in d.get("images", [])]
    return manifest


def mask_original_image(rgb: RgbImage, full_depth: DepthImage, cropped_depth: DepthImage,
                        eps: float = MASK_DEPTH_EPS_M):
    """Hide everything that is not the cropped tree, or that another tree occludes.

    A pixel survives only where the cropped render has depth and the full-scene
    depth is not more than eps nearer (another tree in front). Dropped pixels
    get depth 0 and black RGB.
    """
    if rgb.data.shape[:2] != full_depth.data.shape or rgb.data.shape[:2] != cropped_depth.data.shape:
        raise ValueError("rgb and depth images must share the same size")
    occluded = full_depth.data < cropped_depth.data - eps
    keep = (cropped_depth.data > 0) & ~occluded
    out_depth = np.where(keep, cropped_depth.data, 0.0)
    out_rgb = np.where(keep[:, :, None], rgb.data, 0.0)
    return RgbImage(out_rgb), DepthImage(out_depth)


def filter_labels_by_occlusion(labels, limit: float):
    """Keep labels whose occlusion rate is at or below the limit (percent)."""
    return [lab for lab in labels if lab.occlusion <= limit]


def _crop_image(img: RgbImage, rect) -> RgbImage:
    return RgbImage(img.data[rect.y : rect.y + rect.height, rect.x : rect.x + rect.width])


def _crop_depth(img: DepthImage, rect) -> DepthImage:
    return DepthImage(img.data[rect.y : rect.y + rect.height, rect.x : rect.x + rect.width])


def _labels_for_camera(camera, tree_annotations, poses, scene_for_occlusion, scene_depth=None):
    """Labels of all annotated fruits visible in one camera.

    The occlusion scene depth is rendered once per camera (lazily, only when a
    fruit is actually in view) unless a precomputed one is passed in.
    """
    visible = [ann for ann in tree_annotations if fruit_in_view(ann, camera)]
    if not visible:
        return []
    if scene_depth is None:
        scene_depth = render_scene(scene_for_occlusion, camera)[1]
    labels = []
    for ann in visible:
        try:
            occ = compute_occlusion(ann, scene_for_occlusion, camera, scene_depth=scene_depth)
        except FruitNotVisibleError:
            continue
        labels.append(project_label(poses[ann.fruit_id], ann, camera, occ))
    return labels


class _SplitWriter:
    def __init__(self, out_dir: Path, split: str, mode: str, occlusion_limit: float,
                 sh_degree=None):
        self.dir = out_dir / split
        (self.dir / "images").mkdir(parents=True, exist_ok=True)
        (self.dir / "depth").mkdir(parents=True, exist_ok=True)
        self.labels = []
        self.sh_degree = sh_degree
        conventions = _default_conventions()
        if sh_degree is not None:
            conventions["sh_degree"] = sh_degree
        self.manifest = DatasetManifest(
            split=split, mode=mode, occlusion_limit=occlusion_limit,
            conventions=conventions,
        )

    def add_image(self, name, rgb: RgbImage, depth: DepthImage, camera_id, source, labels):
        rgb_rel = f"images/{name}.png"
        depth_rel = f"depth/{name}.png"
        rgb.save_png(self.dir / rgb_rel)
        depth.save_png(self.dir / depth_rel)
        write_sidecar(self.dir / rgb_rel, camera_id, sh_degree=self.sh_degree)
        write_sidecar(self.dir / depth_rel, camera_id, sh_degree=self.sh_degree)
        self.labels.extend(labels)
        self.manifest.images.append(
            ImageRecord(rgb=rgb_rel, depth=depth_rel, camera_id=camera_id,
                        source=source, label_count=len(labels))
        )

    def close(self):
        write_labels_jsonl(self.dir / self.manifest.label_file, self.labels)
        self.manifest.finalize()
        save_manifest(self.dir / "manifest.json", self.manifest)
        return self.manifest


def build_dataset(
    scene,
    annotations,
    tree_boxes,
    split_config,
    occlusion_limit,
    out_dir,
    mode,
    trajectory_config=None,
    cameras=None,
    images_dir=None,
    patch_size=None,
    render_workers=1,
):
    """Build train/val/test datasets; returns {split: DatasetManifest}.

    Rendered mode needs `trajectory_config` (its tree_origin is re-anchored at
    each tree box center). Original mode needs `cameras`, `images_dir` (PNG per
    camera id) and `patch_size`.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    marker = out_dir / INCOMPLETE_MARKER
    marker.write_text("build in progress\n")
    try:
        manifests = _build_dataset_inner(
            scene, annotations, tree_boxes, validate_split_config(split_config),
            occlusion_limit, out_dir, mode, trajectory_config, cameras, images_dir,
            patch_size, render_workers,
        )
        marker.unlink()
        return manifests
    except BaseException:
        marker.write_text("build failed: partial output must not be consumed\n")
        raise


def _build_dataset_inner(scene, annotations, tree_boxes, split_config, occlusion_limit,
                         out_dir, mode, trajectory_config, cameras, images_dir,
                         patch_size, render_workers):
    by_tree = {}
    for ann in annotations:
        by_tree.setdefault(ann.tree_id, []).append(ann)
    unknown = set(by_tree) - set(split_config)
    if unknown:
        raise ValueError(f"trees without split assignment: {sorted(unknown)}")
    poses = {ann.fruit_id: build_fruit_pose(ann) for ann in annotations}

    writers = {}

    def writer(split):
        if split not in writers:
            writers[split] = _SplitWriter(out_dir, split, mode, occlusion_limit,
                                          sh_degree=scene.sh_degree)
        return writers[split]

    if mode == "rendered":
        if trajectory_config is None:
            raise ValueError("rendered mode needs a trajectory config")
        for tree_id in sorted(tree_boxes):
            split = split_config[tree_id]
            tree_scene = crop_scene(scene, tree_boxes[tree_id])
            if len(tree_scene) == 0:
                continue
            traj = replace(trajectory_config, tree_origin=tree_boxes[tree_id].center)
            for cam in generate_trajectory(traj):
                cam = cam.with_id(f"{tree_id}/{cam.id}")
                rgb, depth = render_scene(tree_scene, cam, workers=render_workers)
                labels = _labels_for_camera(cam, by_tree.get(tree_id, []), poses,
                                            tree_scene, depth)
                labels = filter_labels_by_occlusion(labels, occlusion_limit)
                name = cam.id.replace("/", "_")
                writer(split).add_image(name, rgb, depth, cam.id, "rendered", labels)
    elif mode == "original":
        if cameras is None or images_dir is None or patch_size is None:
            raise ValueError("original mode needs cameras, images_dir and patch_size")
        images_dir = Path(images_dir)
        for cam in cameras:
            rgb = RgbImage.load_png(images_dir / f"{cam.id}.png")
            if (rgb.width, rgb.height) != (cam.intrinsics.width, cam.intrinsics.height):
                raise ValueError(f"image size mismatch for camera {cam.id!r}")
            full_depth = render_scene(scene, cam, workers=render_workers)[1]
            grid = generate_patch_grid((cam.intrinsics.width, cam.intrinsics.height), patch_size)
            for tree_id in sorted(tree_boxes):
                split = split_config[tree_id]
                tree_scene = crop_scene(scene, tree_boxes[tree_id])
                if len(tree_scene) == 0:
                    continue
                cropped_depth = render_scene(tree_scene, cam, workers=render_workers)[1]
                masked_rgb, masked_depth = mask_original_image(rgb, full_depth, cropped_depth)
                for rect in grid:
                    pcam = patch_camera(cam, rect).with_id(
                        f"{cam.id}/{tree_id}/p{rect.x}_{rect.y}")
                    labels = _labels_for_camera(pcam, by_tree.get(tree_id, []), poses, scene)
                    labels = filter_labels_by_occlusion(labels, occlusion_limit)
                    name = pcam.id.replace("/", "_")
                    writer(split).add_image(
                        name, _crop_image(masked_rgb, rect), _crop_depth(masked_depth, rect),
                        pcam.id, "original", labels,
                    )
    else:
        raise ValueError(f"unknown mode {mode!r}")

    return {split: w.close() for split, w in writers.items()}


def subsample_dataset(manifest: DatasetManifest, target_label_count: int, seed: int,
                      out_dir) -> DatasetManifest:
    """Randomly keep whole images until their labels first reach the target count.

    Emits a new manifest plus filtered label file in out_dir; image files are
    referenced from the source dataset, not copied.
    """
    if manifest.path is None:
        raise ValueError("manifest must be loaded from or saved to disk first")
    available = sum(rec.label_count for rec in manifest.images)
    if target_label_count > available:
        raise ValueError(f"target {target_label_count} exceeds available labels {available}")

    src_dir = manifest.path.parent
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(manifest.images))
    chosen = []
    total = 0
    for idx in order:
        if total >= target_label_count:
            break
        rec = manifest.images[idx]
        chosen.append(rec)
        total += rec.label_count

    keep_ids = {rec.camera_id for rec in chosen}
    labels = [lab for lab in read_labels_jsonl(src_dir / manifest.label_file)
              if lab.camera_id in keep_ids]

    sub = DatasetManifest(
        split=manifest.split,
        mode=manifest.mode,
        occlusion_limit=manifest.occlusion_limit,
        conventions=dict(manifest.conventions),
    )
    sub.conventions["subsampled_from"] = str(manifest.path)
    sub.conventions["target_label_count"] = target_label_count
    sub.conventions["achieved_label_count"] = total
    sub.conventions["seed"] = seed
    for rec in chosen:
        sub.images.append(
            ImageRecord(
                rgb=os.path.relpath(src_dir / rec.rgb, out_dir),
                depth=os.path.relpath(src_dir / rec.depth, out_dir),
                camera_id=rec.camera_id,
                source=rec.source,
                label_count=rec.label_count,
            )
        )
    write_labels_jsonl(out_dir / sub.label_file, labels)
    sub.finalize()
    save_manifest(out_dir / "manifest.json", sub)
    return sub


def verify_manifest(manifest: DatasetManifest):
    """Re-scan a manifest's directory: counts must match files and label lines."""
    base = manifest.path.parent
    problems = []
    labels = read_labels_jsonl(base / manifest.label_file)
    if len(labels) != manifest.counts.get("labels"):
        problems.append(
            f"label count mismatch: {len(labels)} lines vs {manifest.counts.get('labels')}"
        )
    if len(manifest.images) != manifest.counts.get("images"):
        problems.append("image count mismatch")
    for rec in manifest.images:
        for rel in (rec.rgb, rec.depth):
            if not (base / rel).exists():
                problems.append(f"missing file {rel}")
    per_image = {}
    for lab in labels:
        per_image[lab.camera_id] = per_image.get(lab.camera_id, 0) + 1
    for rec in manifest.images:
        if per_image.get(rec.camera_id, 0) != rec.label_count:
            problems.append(f"label count mismatch for image {rec.camera_id}")
    return problems
