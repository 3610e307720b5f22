"""Fruit annotations: 5D poses from segmented point clouds, occlusion rates,
and per-image labels.

A fruit is annotated once in 3D (its point cloud plus a calyx point); from
that, this module derives the oriented box pose, projects per-camera labels,
and scores how much of the fruit each camera actually sees by differencing a
fruit-only depth render against the full-scene depth render. A pixel counts
as occluded when the scene depth is more than the threshold (default 15 mm)
nearer than the fruit depth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cameras import MIN_DEPTH, CameraModel, points_in_frustum, project_points
from .geometry import matrix_to_quat, normalize, quat_to_matrix
from .render import DepthImage, render_scene, render_point_depth
from .splats import PointCloud, SplatScene, load_point_cloud

OCCLUSION_THRESHOLD_M = 0.015
MIN_FRUIT_POINTS = 50
_WORLD_UP = np.array([0.0, 0.0, 1.0])
_UP_FALLBACK = np.array([1.0, 0.0, 0.0])


class FruitNotVisibleError(ValueError):
    """The fruit has no silhouette pixels in this camera."""


class NotInViewError(ValueError):
    """No fruit point falls inside the camera frustum."""


@dataclass(frozen=True)
class FruitAnnotation:
    fruit_id: str
    tree_id: str
    points: PointCloud
    calyx: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "calyx", np.asarray(self.calyx, dtype=np.float64).reshape(3))
        if len(self.points) < MIN_FRUIT_POINTS:
            raise ValueError(
                f"fruit {self.fruit_id!r} has {len(self.points)} points, needs >= {MIN_FRUIT_POINTS}"
            )
        centroid = self.points.points.mean(axis=0)
        radius = np.linalg.norm(self.points.points - centroid, axis=1).max()
        if np.linalg.norm(self.calyx - centroid) > 3.0 * radius:
            raise ValueError(f"fruit {self.fruit_id!r}: calyx lies too far from the point cloud")


@dataclass(frozen=True)
class FruitPose:
    """Oriented box: X axis points from fruit center toward the calyx."""

    center: np.ndarray
    axis: np.ndarray
    box_rotation: np.ndarray  # quaternion (w, x, y, z); box axes are its columns
    extents: np.ndarray  # full side lengths, meters

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=np.float64).reshape(3))
        object.__setattr__(
            self, "box_rotation", np.asarray(self.box_rotation, dtype=np.float64).reshape(4)
        )
        object.__setattr__(self, "extents", np.asarray(self.extents, dtype=np.float64).reshape(3))
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-6:
            raise ValueError("pose axis must be unit length")
        if np.any(self.extents <= 0):
            raise ValueError("pose extents must be positive")


@dataclass(frozen=True)
class OcclusionResult:
    occlusion: float  # percent
    s_total: int  # fruit silhouette pixels
    s_occluded: int


@dataclass(frozen=True)
class ImageLabel:
    fruit_id: str
    tree_id: str
    camera_id: str
    bbox2d: tuple  # (x_min, y_min, x_max, y_max), pixels, clipped to the image
    obb_camera: FruitPose  # pose in the camera frame
    occlusion: float
    s_total: int
    s_occluded: int


def build_fruit_pose(ann: FruitAnnotation) -> FruitPose:
    """Oriented box from the segmented cloud and the calyx point.

    The box X axis is the unit vector from the point centroid to the calyx;
    Y is X crossed with world up (+Z, falling back to +X when parallel); the
    extents are the min/max spans of the points along the box axes and the
    center is the box midpoint in world coordinates.
    """
    pts = ann.points.points
    centroid = pts.mean(axis=0)
    to_calyx = ann.calyx - centroid
    if np.linalg.norm(to_calyx) < 1e-3:
        raise ValueError(f"fruit {ann.fruit_id!r}: calyx coincides with the centroid")
    x_axis = normalize(to_calyx)
    up = _WORLD_UP if np.linalg.norm(np.cross(x_axis, _WORLD_UP)) >= 1e-3 else _UP_FALLBACK
    y_axis = normalize(np.cross(x_axis, up))
    z_axis = np.cross(x_axis, y_axis)
    basis = np.stack([x_axis, y_axis, z_axis], axis=1)

    proj = pts @ basis
    lo = proj.min(axis=0)
    hi = proj.max(axis=0)
    return FruitPose(
        center=basis @ ((lo + hi) / 2.0),
        axis=x_axis,
        box_rotation=matrix_to_quat(basis),
        extents=hi - lo,
    )


def compute_occlusion(
    ann: FruitAnnotation,
    scene: SplatScene,
    camera: CameraModel,
    threshold: float = OCCLUSION_THRESHOLD_M,
    point_radius_px: int = 1,
    scene_depth: DepthImage | None = None,
) -> OcclusionResult:
    """Occlusion rate of one fruit in one camera: 100 * s_O / s_T.

    s_T counts pixels covered by the fruit-only depth render; s_O counts those
    where the scene depth is more than `threshold` meters nearer. The scene
    depth render may be passed in to amortize it over many fruits.
    """
    fruit_depth = render_point_depth(ann.points, camera, point_radius_px).data
    covered = fruit_depth > 0
    s_total = int(covered.sum())
    if s_total == 0:
        raise FruitNotVisibleError(
            f"fruit {ann.fruit_id!r} has no silhouette pixels in camera {camera.id!r}"
        )
    if scene_depth is None:
        scene_depth = render_scene(scene, camera)[1]
    occluded = covered & (fruit_depth - scene_depth.data > threshold)
    s_occ = int(occluded.sum())
    return OcclusionResult(occlusion=100.0 * s_occ / s_total, s_total=s_total, s_occluded=s_occ)


def fruit_in_view(ann: FruitAnnotation, camera: CameraModel) -> bool:
    """True when at least one fruit point lies inside the camera frustum."""
    return bool(points_in_frustum(camera, ann.points.points).any())


def pose_in_camera_frame(pose: FruitPose, camera: CameraModel) -> FruitPose:
    w2c = camera.rotation_c2w().T
    return FruitPose(
        center=w2c @ (pose.center - camera.pose.translation),
        axis=w2c @ pose.axis,
        box_rotation=matrix_to_quat(w2c @ quat_to_matrix(pose.box_rotation)),
        extents=pose.extents,
    )


def project_label(
    pose: FruitPose, ann: FruitAnnotation, camera: CameraModel, occ: OcclusionResult
) -> ImageLabel:
    """Image-space label: 2D box over the projected points plus the camera-frame pose."""
    if not fruit_in_view(ann, camera):
        raise NotInViewError(f"fruit {ann.fruit_id!r} is outside camera {camera.id!r}")
    uv, z = project_points(camera, ann.points.points)
    uv = uv[z > MIN_DEPTH]
    k = camera.intrinsics
    x0, y0 = uv.min(axis=0)
    x1, y1 = uv.max(axis=0)
    bbox = (
        float(np.clip(x0, 0, k.width)),
        float(np.clip(y0, 0, k.height)),
        float(np.clip(x1, 0, k.width)),
        float(np.clip(y1, 0, k.height)),
    )
    return ImageLabel(
        fruit_id=ann.fruit_id,
        tree_id=ann.tree_id,
        camera_id=camera.id,
        bbox2d=bbox,
        obb_camera=pose_in_camera_frame(pose, camera),
        occlusion=occ.occlusion,
        s_total=occ.s_total,
        s_occluded=occ.s_occluded,
    )


# ---------------------------------------------------------------------------
# File formats. Annotation JSON: {fruit_id, tree_id, calyx, points_file} with
# points_file a PLY path relative to the JSON. Labels are JSON lines; the
# oriented box lives in the camera frame. Units: meters, pixels, percent.

def load_annotation(path) -> FruitAnnotation:
    path = Path(path)
    data = json.loads(path.read_text())
    cloud = load_point_cloud(path.parent / data["points_file"])
    return FruitAnnotation(
        fruit_id=str(data["fruit_id"]),
        tree_id=str(data["tree_id"]),
        points=cloud,
        calyx=np.array(data["calyx"], dtype=np.float64),
    )


def save_annotation(path, ann: FruitAnnotation, points_file=None):
    from .splats import save_point_cloud

    path = Path(path)
    points_file = points_file or f"fruit_{ann.fruit_id}.ply"
    save_point_cloud(path.parent / points_file, ann.points)
    path.write_text(
        json.dumps(
            {
                "fruit_id": ann.fruit_id,
                "tree_id": ann.tree_id,
                "calyx": ann.calyx.tolist(),
                "points_file": points_file,
            },
            indent=2,
        )
    )


def load_annotation_dir(directory):
    anns = []
    for path in sorted(Path(directory).glob("*.json")):
        anns.append(load_annotation(path))
    return anns


def label_to_dict(label: ImageLabel) -> dict:
    obb = label.obb_camera
    return {
        "fruit_id": label.fruit_id,
        "tree_id": label.tree_id,
        "camera_id": label.camera_id,
        "bbox2d": list(label.bbox2d),
        "center": obb.center.tolist(),
        "extents": obb.extents.tolist(),
        "q": obb.box_rotation.tolist(),
        "axis": obb.axis.tolist(),
        "occlusion": label.occlusion,
        "s_T": label.s_total,
        "s_O": label.s_occluded,
    }


def label_from_dict(d) -> ImageLabel:
    pose = FruitPose(
        center=np.array(d["center"]),
        axis=normalize(np.array(d["axis"])),
        box_rotation=np.array(d["q"]),
        extents=np.array(d["extents"]),
    )
    return ImageLabel(
        fruit_id=str(d["fruit_id"]),
        tree_id=str(d.get("tree_id", "")),
        camera_id=str(d["camera_id"]),
        bbox2d=tuple(d["bbox2d"]),
        obb_camera=pose,
        occlusion=float(d["occlusion"]),
        s_total=int(d["s_T"]),
        s_occluded=int(d["s_O"]),
    )


def write_labels_jsonl(path, labels):
    with open(path, "w") as fh:
        for label in labels:
            fh.write(json.dumps(label_to_dict(label)) + "\n")


def read_labels_jsonl(path):
    labels = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                labels.append(label_from_dict(json.loads(line)))
    return labels
