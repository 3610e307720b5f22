"""Pinhole camera math: projection, patch intrinsics, and orbit trajectories.

Camera frame convention everywhere: +Z forward, +X right, +Y down. Poses store
the camera-to-world rotation as a quaternion and the camera center in world
coordinates. Pixel coordinates follow u = fx * X / Z + cx, v = fy * Y / Z + cy,
with pixel centers at integer coordinates.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import check_unit_quat, matrix_to_quat, quat_to_matrix, rot_x, rot_y, rot_z

CONVENTION = "z-forward,y-down"
MIN_DEPTH = 1e-9

# Camera axes (right, down, forward) expressed in the pre-rotation orbit frame,
# where the camera sits on -X looking at the origin and world up is +Z.
_ORBIT_TO_CAMERA = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)


class BehindCameraError(ValueError):
    """World point does not project: it lies at or behind the camera plane."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray  # camera-to-world quaternion (w, x, y, z)
    translation: np.ndarray  # camera center in world, meters

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(4))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3)
        )
        check_unit_quat(self.rotation, "camera pose rotation")


@dataclass(frozen=True)
class CameraModel:
    intrinsics: Intrinsics
    pose: CameraPose
    id: str = ""

    def rotation_c2w(self):
        return quat_to_matrix(self.pose.rotation)

    def world_to_camera(self, points):
        """Transform (..., 3) world points into the camera frame."""
        points = np.asarray(points, dtype=np.float64)
        return (points - self.pose.translation) @ self.rotation_c2w()

    def with_id(self, camera_id: str) -> "CameraModel":
        return replace(self, id=camera_id)


def project_point(camera: CameraModel, world_point):
    """Project one world point; returns ((u, v), depth) or raises BehindCameraError."""
    x, y, z = camera.world_to_camera(np.asarray(world_point, dtype=np.float64))
    if z <= MIN_DEPTH:
        raise BehindCameraError(f"point at camera depth {z:.3g} is behind the camera")
    k = camera.intrinsics
    return np.array([k.fx * x / z + k.cx, k.fy * y / z + k.cy]), float(z)


def project_points(camera: CameraModel, world_points):
    """Vectorized projection. Returns (uv (n, 2), depth (n,)); uv is NaN where
    depth <= MIN_DEPTH instead of raising."""
    pts = camera.world_to_camera(world_points)
    z = pts[:, 2]
    k = camera.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([k.fx * pts[:, 0] / z + k.cx, k.fy * pts[:, 1] / z + k.cy], axis=1)
    uv[z <= MIN_DEPTH] = np.nan
    return uv, z


def points_in_frustum(camera: CameraModel, world_points):
    """Boolean mask: in front of the camera and projecting inside the image."""
    uv, z = project_points(camera, world_points)
    k = camera.intrinsics
    with np.errstate(invalid="ignore"):
        inside = (
            (z > MIN_DEPTH)
            & (uv[:, 0] >= 0)
            & (uv[:, 0] <= k.width - 1)
            & (uv[:, 1] >= 0)
            & (uv[:, 1] <= k.height - 1)
        )
    return inside


@dataclass(frozen=True)
class PatchRect:
    x: int
    y: int
    width: int
    height: int


def generate_patch_grid(image_size, patch_size: int):
    """Uniform-overlap grid of patch_size x patch_size rects covering the image.

    Columns: ceil(W/P); rows: ceil(H/P). Origins are spread evenly between 0
    and the far edge (rounded to integer pixels), so the first patch starts at
    0 and the last ends flush with the image border.
    """
    w, h = int(image_size[0]), int(image_size[1])
    p = int(patch_size)
    if p > w or p > h:
        raise ValueError(f"patch size {p} exceeds image size {w}x{h}")

    def origins(extent, count):
        if count == 1:
            return [0]
        return [round(i * (extent - p) / (count - 1)) for i in range(count)]

    n_cols = -(-w // p)
    n_rows = -(-h // p)
    return [
        PatchRect(x, y, p, p)
        for y in origins(h, n_rows)
        for x in origins(w, n_cols)
    ]


def patch_camera(camera: CameraModel, rect: PatchRect) -> CameraModel:
    """Camera for a patch: principal point shifted by the patch origin, pose kept."""
    k = camera.intrinsics
    if rect.x < 0 or rect.y < 0 or rect.x + rect.width > k.width or rect.y + rect.height > k.height:
        raise ValueError("patch rect exceeds image bounds")
    patched = Intrinsics(
        fx=k.fx,
        fy=k.fy,
        cx=k.cx - rect.x,
        cy=k.cy - rect.y,
        width=rect.width,
        height=rect.height,
    )
    return CameraModel(intrinsics=patched, pose=camera.pose, id=camera.id)


@dataclass(frozen=True)
class AxisSpec:
    """One trajectory setting: an inclusive range sampled with a fixed step count."""

    steps: int
    lo: float
    hi: float

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("step count must be >= 1")
        if self.lo > self.hi:
            raise ValueError("range min must be <= max")

    def values(self):
        if self.steps == 1:
            return np.array([self.lo])
        return np.linspace(self.lo, self.hi, self.steps)


@dataclass(frozen=True)
class TrajectoryConfig:
    height: AxisSpec  # meters along world +Z
    roll: AxisSpec  # radians, about the viewing axis
    pitch: AxisSpec  # radians
    yaw: AxisSpec  # radians, about world +Z
    distance: AxisSpec  # meters back from the tree
    tree_origin: np.ndarray
    intrinsics: Intrinsics | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "tree_origin", np.asarray(self.tree_origin, dtype=np.float64).reshape(3)
        )

    def pose_count(self):
        return (
            self.height.steps
            * self.roll.steps
            * self.pitch.steps
            * self.yaw.steps
            * self.distance.steps
        )


def generate_trajectory(config: TrajectoryConfig, intrinsics: Intrinsics | None = None):
    """All camera poses of the height x roll x pitch x yaw x distance grid.

    Construction per pose: translate the tree origin up by the height, rotate
    the orbit frame by R = Rz(yaw) @ Ry(pitch) @ Rx(roll), then pull the camera
    back along the rotated X axis by the distance. The camera looks along that
    axis toward the tree.
    """
    k = intrinsics or config.intrinsics
    if k is None:
        raise ValueError("trajectory needs intrinsics (in the config or as an argument)")
    cameras = []
    grid = itertools.product(
        config.height.values(),
        config.roll.values(),
        config.pitch.values(),
        config.yaw.values(),
        config.distance.values(),
    )
    for i, (h, roll, pitch, yaw, dist) in enumerate(grid):
        orbit = rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)
        center = config.tree_origin + np.array([0.0, 0.0, h]) - dist * orbit[:, 0]
        pose = CameraPose(rotation=matrix_to_quat(orbit @ _ORBIT_TO_CAMERA), translation=center)
        cameras.append(CameraModel(intrinsics=k, pose=pose, id=f"pose{i:05d}"))
    return cameras


def table_grid_config(tree_origin=(0.0, 0.0, 0.0), intrinsics=None) -> TrajectoryConfig:
    """The around-tree render grid: 3 heights x 7 rolls x 3 pitches x 32 yaws x 2 distances."""
    return TrajectoryConfig(
        height=AxisSpec(3, -0.5, 0.7),
        roll=AxisSpec(7, -np.pi / 2, np.pi / 2),
        pitch=AxisSpec(3, -np.pi / 4, np.pi / 4),
        yaw=AxisSpec(32, 0.0, 2 * np.pi),
        distance=AxisSpec(2, 2.7, 3.2),
        tree_origin=tree_origin,
        intrinsics=intrinsics,
    )


def _intrinsics_to_dict(k: Intrinsics):
    return {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height}


def _intrinsics_from_dict(d) -> Intrinsics:
    return Intrinsics(
        fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
        width=int(d["width"]), height=int(d["height"]),
    )


def save_cameras(path, cameras):
    records = []
    for cam in cameras:
        rec = {"id": cam.id}
        rec.update(_intrinsics_to_dict(cam.intrinsics))
        rec["q"] = cam.pose.rotation.tolist()
        rec["t"] = cam.pose.translation.tolist()
        rec["convention"] = CONVENTION
        records.append(rec)
    Path(path).write_text(json.dumps(records, indent=2))


def load_cameras(path):
    records = json.loads(Path(path).read_text())
    cameras = []
    for rec in records:
        conv = rec.get("convention", CONVENTION)
        if conv != CONVENTION:
            raise ValueError(f"camera {rec.get('id')!r} uses unsupported convention {conv!r}")
        cameras.append(
            CameraModel(
                intrinsics=_intrinsics_from_dict(rec),
                pose=CameraPose(rotation=np.array(rec["q"]), translation=np.array(rec["t"])),
                id=str(rec.get("id", "")),
            )
        )
    return cameras


def _axis_from_dict(d) -> AxisSpec:
    return AxisSpec(steps=int(d["steps"]), lo=float(d["range"][0]), hi=float(d["range"][1]))


def load_trajectory_config(path) -> TrajectoryConfig:
    d = json.loads(Path(path).read_text())
    intr = _intrinsics_from_dict(d["intrinsics"]) if "intrinsics" in d else None
    return TrajectoryConfig(
        height=_axis_from_dict(d["height"]),
        roll=_axis_from_dict(d["roll"]),
        pitch=_axis_from_dict(d["pitch"]),
        yaw=_axis_from_dict(d["yaw"]),
        distance=_axis_from_dict(d["distance"]),
        tree_origin=np.array(d.get("tree_origin", [0.0, 0.0, 0.0])),
        intrinsics=intr,
    )


def save_trajectory_config(path, config: TrajectoryConfig):
    def axis(a):
        return {"steps": a.steps, "range": [a.lo, a.hi]}

    d = {
        "height": axis(config.height),
        "roll": axis(config.roll),
        "pitch": axis(config.pitch),
        "yaw": axis(config.yaw),
        "distance": axis(config.distance),
        "tree_origin": config.tree_origin.tolist(),
        "rotation_order": "yaw*pitch*roll",
        "convention": CONVENTION,
    }
    if config.intrinsics is not None:
        d["intrinsics"] = _intrinsics_to_dict(config.intrinsics)
    Path(path).write_text(json.dumps(d, indent=2))
