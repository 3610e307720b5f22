"""Command-line interface.

Subcommands mirror the pipeline operations: synth, crop, convert, render,
occlusion, mask, patch, build-dataset, subsample, eval, and serve (the HTTP
backend for the browser annotation tool).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatlabel",
        description="Occlusion-aware fruit pose datasets from Gaussian-splat scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic orchard for demos and tests")
    p.add_argument("--out", required=True)
    p.add_argument("--trees", type=int, default=3)
    p.add_argument("--fruits-per-tree", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-width", type=int, default=320)
    p.add_argument("--image-height", type=int, default=240)
    p.add_argument("--original-cameras", type=int, default=2,
                   help="number of synthetic 'captured' cameras to render")

    p = sub.add_parser("crop", help="cut a scene into per-tree scenes")
    p.add_argument("--scene", required=True)
    p.add_argument("--trees", required=True, help="tree boxes JSON")
    p.add_argument("--out", required=True, help="output directory for per-tree PLYs")

    p = sub.add_parser("convert", help="sample a scene into a colored point cloud")
    p.add_argument("--scene", required=True)
    p.add_argument("--points", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ascii", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", help="render RGB + depth images from cameras or a trajectory")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", help="camera JSON file")
    p.add_argument("--trajectory", help="trajectory config JSON")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("occlusion", help="occlusion rate of each fruit in each camera")
    p.add_argument("--scene", required=True)
    p.add_argument("--annotations", required=True, help="annotation directory")
    p.add_argument("--cameras", required=True)
    p.add_argument("--threshold-mm", type=float, default=15.0)
    p.add_argument("--out", help="JSONL output (default: stdout)")

    p = sub.add_parser("mask", help="mask an original image to a single tree")
    p.add_argument("--rgb", required=True)
    p.add_argument("--full-depth", required=True)
    p.add_argument("--cropped-depth", required=True)
    p.add_argument("--out-rgb", required=True)
    p.add_argument("--out-depth", required=True)

    p = sub.add_parser("patch", help="cut an image into patches with shifted intrinsics")
    p.add_argument("--image", required=True)
    p.add_argument("--cameras", required=True, help="camera JSON file")
    p.add_argument("--camera-id", required=True)
    p.add_argument("--patch-size", type=int, default=1300)
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-dataset", help="build train/val/test datasets")
    p.add_argument("--scene", required=True)
    p.add_argument("--trees", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--mode", choices=["rendered", "original"], required=True)
    p.add_argument("--trajectory", help="trajectory config JSON (rendered mode)")
    p.add_argument("--cameras", help="camera JSON file (original mode)")
    p.add_argument("--images", help="directory of original PNGs (original mode)")
    p.add_argument("--patch-size", type=int, default=1300)
    p.add_argument("--occlusion-limit", type=float, default=100.0)
    p.add_argument("--split-config", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("subsample", help="subsample a dataset to a target label count")
    p.add_argument("--manifest", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a prediction file against labels")
    p.add_argument("--gt", required=True, help="labels JSONL")
    p.add_argument("--pred", required=True, help="predictions JSONL")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--test-occlusion-limit", type=float, default=100.0)
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)

    p = sub.add_parser("serve", help="HTTP backend for the browser annotation tool")
    p.add_argument("--cloud", required=True, help="point cloud PLY to annotate")
    p.add_argument("--annotations", required=True, help="annotation directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--frontend", help="directory of built UI assets to serve at /")

    return parser


def _cmd_synth(args):
    from .cameras import AxisSpec, TrajectoryConfig, save_cameras, save_trajectory_config
    from .datasets import save_split_config
    from .render import render_scene, write_sidecar
    from .splats import save_scene, save_tree_boxes
    from .annotate import save_annotation
    from . import synthetic as syn

    out = Path(args.out)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    (out / "raw").mkdir(exist_ok=True)

    orch = syn.make_orchard(args.trees, args.fruits_per_tree, seed=args.seed)
    save_scene(out / "scene.ply", orch.scene)
    save_tree_boxes(out / "trees.json", orch.boxes)
    save_split_config(out / "splits.json", orch.splits)
    for ann in orch.annotations:
        save_annotation(out / "annotations" / f"{ann.fruit_id}.json", ann)

    intr = syn.default_intrinsics(args.image_width, args.image_height,
                                  focal=0.9 * args.image_width)
    mid = np.mean([box.center for box in orch.boxes.values()], axis=0)
    cams = []
    for i in range(args.original_cameras):
        angle = 2 * np.pi * i / max(args.original_cameras, 1)
        center = mid + np.array([-4.5 * np.cos(angle), -4.5 * np.sin(angle), 0.4])
        cams.append(syn.look_at_camera(center, mid, intr, camera_id=f"orig{i:02d}"))
    save_cameras(out / "cameras.json", cams)
    for cam in cams:
        rgb, _ = render_scene(orch.scene, cam)
        rgb.save_png(out / "raw" / f"{cam.id}.png")
        write_sidecar(out / "raw" / f"{cam.id}.png", cam.id)

    traj = TrajectoryConfig(
        height=AxisSpec(1, 1.2, 1.2),
        roll=AxisSpec(1, 0.0, 0.0),
        pitch=AxisSpec(1, 0.0, 0.0),
        yaw=AxisSpec(4, 0.0, 2 * np.pi),
        distance=AxisSpec(1, 3.0, 3.0),
        tree_origin=np.zeros(3),
        intrinsics=intr,
    )
    save_trajectory_config(out / "trajectory.json", traj)
    print(f"synthetic orchard written to {out} "
          f"({args.trees} trees, {len(orch.annotations)} fruits, {len(orch.scene)} splats)")
    return 0


def _cmd_crop(args):
    from .splats import crop_scene, load_scene, load_tree_boxes, save_scene

    scene = load_scene(args.scene)
    boxes = load_tree_boxes(args.trees)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for tree_id, box in boxes.items():
        cropped = crop_scene(scene, box)
        save_scene(out / f"{tree_id}.ply", cropped)
        print(f"{tree_id}: {len(cropped)} of {len(scene)} splats")
    return 0


def _cmd_convert(args):
    from .splats import load_scene, sample_point_cloud, save_point_cloud

    scene = load_scene(args.scene)
    cloud = sample_point_cloud(scene, args.points, args.seed)
    save_point_cloud(args.out, cloud, ascii_format=args.ascii)
    print(f"sampled {len(cloud)} points -> {args.out}")
    return 0


def _cmd_render(args):
    from .cameras import generate_trajectory, load_cameras, load_trajectory_config
    from .render import render_scene, write_sidecar
    from .splats import load_scene

    if bool(args.cameras) == bool(args.trajectory):
        raise SystemExit("render: pass exactly one of --cameras / --trajectory")
    scene = load_scene(args.scene)
    if args.cameras:
        cams = load_cameras(args.cameras)
    else:
        cams = generate_trajectory(load_trajectory_config(args.trajectory))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for cam in cams:
        rgb, depth = render_scene(scene, cam, workers=args.workers)
        stem = cam.id.replace("/", "_") or "camera"
        rgb.save_png(out / f"{stem}.png")
        depth.save_png(out / f"{stem}_depth.png")
        write_sidecar(out / f"{stem}.png", cam.id, sh_degree=scene.sh_degree)
        write_sidecar(out / f"{stem}_depth.png", cam.id, sh_degree=scene.sh_degree)
    print(f"rendered {len(cams)} views -> {out}")
    return 0


def _cmd_occlusion(args):
    from .annotate import compute_occlusion, fruit_in_view, load_annotation_dir
    from .cameras import load_cameras
    from .render import render_scene
    from .splats import load_scene

    scene = load_scene(args.scene)
    annotations = load_annotation_dir(args.annotations)
    cams = load_cameras(args.cameras)
    rows = []
    for cam in cams:
        visible = [a for a in annotations if fruit_in_view(a, cam)]
        if not visible:
            continue
        scene_depth = render_scene(scene, cam)[1]
        for ann in visible:
            occ = compute_occlusion(ann, scene, cam, threshold=args.threshold_mm / 1000.0,
                                    scene_depth=scene_depth)
            rows.append({
                "camera_id": cam.id, "fruit_id": ann.fruit_id,
                "occlusion": occ.occlusion, "s_T": occ.s_total, "s_O": occ.s_occluded,
            })
    text = "\n".join(json.dumps(r) for r in rows) + ("\n" if rows else "")
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_mask(args):
    from .datasets import mask_original_image
    from .render import DepthImage, RgbImage

    rgb = RgbImage.load_png(args.rgb)
    full = DepthImage.load_png(args.full_depth)
    cropped = DepthImage.load_png(args.cropped_depth)
    out_rgb, out_depth = mask_original_image(rgb, full, cropped)
    out_rgb.save_png(args.out_rgb)
    out_depth.save_png(args.out_depth)
    return 0


def _cmd_patch(args):
    from .cameras import generate_patch_grid, load_cameras, patch_camera, save_cameras
    from .render import RgbImage

    cams = {c.id: c for c in load_cameras(args.cameras)}
    if args.camera_id not in cams:
        raise SystemExit(f"camera {args.camera_id!r} not found in {args.cameras}")
    cam = cams[args.camera_id]
    img = RgbImage.load_png(args.image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = generate_patch_grid((img.width, img.height), args.patch_size)
    patched_cams = []
    for rect in grid:
        pcam = patch_camera(cam, rect).with_id(f"{cam.id}_p{rect.x}_{rect.y}")
        patched_cams.append(pcam)
        tile = RgbImage(img.data[rect.y : rect.y + rect.height, rect.x : rect.x + rect.width])
        tile.save_png(out / f"{pcam.id}.png")
    save_cameras(out / "patch_cameras.json", patched_cams)
    print(f"{len(grid)} patches -> {out}")
    return 0


def _cmd_build_dataset(args):
    from .annotate import load_annotation_dir
    from .cameras import load_cameras, load_trajectory_config
    from .datasets import build_dataset, load_split_config
    from .splats import load_scene, load_tree_boxes

    scene = load_scene(args.scene)
    boxes = load_tree_boxes(args.trees)
    annotations = load_annotation_dir(args.annotations)
    split_config = load_split_config(args.split_config)
    trajectory = load_trajectory_config(args.trajectory) if args.trajectory else None
    cameras = load_cameras(args.cameras) if args.cameras else None
    manifests = build_dataset(
        scene, annotations, boxes, split_config, args.occlusion_limit, args.out,
        mode=args.mode, trajectory_config=trajectory, cameras=cameras,
        images_dir=args.images, patch_size=args.patch_size, render_workers=args.workers,
    )
    for split, manifest in sorted(manifests.items()):
        print(f"{split}: {manifest.counts['images']} images, {manifest.counts['labels']} labels")
    return 0


def _cmd_subsample(args):
    from .datasets import load_manifest, subsample_dataset

    manifest = load_manifest(args.manifest)
    sub = subsample_dataset(manifest, args.target, args.seed, args.out)
    print(f"kept {sub.counts['images']} images, {sub.counts['labels']} labels "
          f"(target {args.target})")
    return 0


def _cmd_eval(args):
    from .annotate import read_labels_jsonl
    from .evaluate import evaluate_predictions, read_predictions_jsonl, write_report

    gts = read_labels_jsonl(args.gt)
    preds = read_predictions_jsonl(args.pred)
    report = evaluate_predictions(
        gts, preds, iou_threshold=args.iou, occlusion_limit=args.test_occlusion_limit,
        n_resamples=args.bootstrap, seed=args.seed,
    )
    write_report(args.report, report)
    print(f"F1 {report.f1:.4f}  neutral F1 {report.neutral_f1:.4f}  "
          f"P {report.precision:.4f}  R {report.recall:.4f}  "
          f"(TP {report.tp} FP {report.fp} FN {report.fn})")
    if report.position_errors.size:
        print(f"position error mean {report.position_errors.mean() * 1000:.2f} mm, "
              f"orientation error mean {report.orientation_errors.mean():.2f} deg")
    print(f"report -> {args.report}")
    return 0


def _cmd_serve(args):
    import uvicorn

    from .server import create_app

    app = create_app(args.cloud, args.annotations, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "crop": _cmd_crop,
    "convert": _cmd_convert,
    "render": _cmd_render,
    "occlusion": _cmd_occlusion,
    "mask": _cmd_mask,
    "patch": _cmd_patch,
    "build-dataset": _cmd_build_dataset,
    "subsample": _cmd_subsample,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
