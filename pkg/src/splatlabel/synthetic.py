"""Synthetic orchard scenes for tests, demos, and desk-scale pipeline runs.

Fruits are spheres (a shell of small opaque Gaussians plus a matching surface
point cloud), trees add a foliage shell and a trunk. The generated scene,
annotations, tree boxes, and split map exercise the full pipeline without any
captured data.
"""

from __future__ import annotations

import numpy as np

from .annotate import FruitAnnotation
from .cameras import CameraModel, CameraPose, Intrinsics
from .evaluate import OrientedBox, Prediction
from .geometry import matrix_to_quat, normalize
from .splats import SH_C0, Aabb, PointCloud, SplatScene

_IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def rgb_to_dc(rgb):
    """Inverse of the degree-0 color mapping (0.5 + C0 * dc)."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


class SceneParts:
    """Accumulates Gaussian arrays before freezing them into a SplatScene."""

    def __init__(self):
        self.positions = []
        self.opacities = []
        self.scales = []
        self.rotations = []
        self.colors = []

    def add(self, positions, opacity, scale, rgb):
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        n = positions.shape[0]
        self.positions.append(positions)
        self.opacities.append(np.full(n, opacity, dtype=np.float64))
        scale = np.asarray(scale, dtype=np.float64)
        if scale.ndim <= 1:
            scale = np.broadcast_to(np.atleast_1d(scale) * np.ones(3), (n, 3))
        self.scales.append(np.array(scale, dtype=np.float64))
        self.rotations.append(np.tile(_IDENTITY_Q, (n, 1)))
        rgb = np.asarray(rgb, dtype=np.float64)
        if rgb.ndim == 1:
            rgb = np.tile(rgb, (n, 1))
        self.colors.append(rgb)

    def scene(self) -> SplatScene:
        positions = np.concatenate(self.positions)
        sh = rgb_to_dc(np.concatenate(self.colors))[:, None, :]
        return SplatScene(
            positions,
            np.concatenate(self.opacities),
            np.concatenate(self.scales),
            np.concatenate(self.rotations),
            sh,
            sh_degree=0,
        )


def fibonacci_sphere(n):
    """n roughly evenly spread unit vectors (deterministic)."""
    i = np.arange(n, dtype=np.float64)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sphere_cloud(center, radius, n_points, seed, rgb=(0.8, 0.15, 0.1)) -> PointCloud:
    """Uniform random points on a sphere surface."""
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_points, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    points = np.asarray(center, dtype=np.float64) + radius * dirs
    return PointCloud(points, np.tile(np.asarray(rgb, dtype=np.float64), (n_points, 1)))


def add_sphere_shell(parts: SceneParts, center, radius, n=300, sigma=None,
                     opacity=0.98, rgb=(0.8, 0.15, 0.1)):
    """Opaque Gaussian shell approximating a sphere surface."""
    if sigma is None:
        # neighbor spacing ~ sqrt(4 pi r^2 / n); overlap keeps the shell closed
        sigma = 1.2 * np.sqrt(4.0 * np.pi * radius**2 / n)
    pts = np.asarray(center, dtype=np.float64) + radius * fibonacci_sphere(n)
    parts.add(pts, opacity, sigma, rgb)


def add_slab(parts: SceneParts, corner, u_vec, v_vec, nu=40, nv=40,
             opacity=0.995, sigma=None, rgb=(0.25, 0.45, 0.2)):
    """Opaque rectangular wall spanned by u_vec and v_vec from corner."""
    u_vec = np.asarray(u_vec, dtype=np.float64)
    v_vec = np.asarray(v_vec, dtype=np.float64)
    if sigma is None:
        sigma = 0.9 * max(np.linalg.norm(u_vec) / nu, np.linalg.norm(v_vec) / nv)
    su = (np.arange(nu) + 0.5) / nu
    sv = (np.arange(nv) + 0.5) / nv
    grid = np.asarray(corner, dtype=np.float64) + su[:, None, None] * u_vec + sv[None, :, None] * v_vec
    parts.add(grid.reshape(-1, 3), opacity, sigma, rgb)


def make_fruit(parts: SceneParts, fruit_id, tree_id, center, radius, axis_dir, seed,
               cloud_points=600, shell_gaussians=200):
    """Add a spherical fruit to the scene and return its annotation.

    The calyx sits on the sphere surface along axis_dir, so the annotated pose
    axis equals axis_dir.
    """
    axis_dir = normalize(axis_dir)
    add_sphere_shell(parts, center, radius, n=shell_gaussians)
    cloud = sphere_cloud(center, radius, cloud_points, seed)
    calyx = np.asarray(center, dtype=np.float64) + radius * axis_dir
    return FruitAnnotation(fruit_id=fruit_id, tree_id=tree_id, points=cloud, calyx=calyx)


def make_tree(parts: SceneParts, tree_id, origin, n_fruits, seed,
              canopy_radius=0.6, foliage=200, fruit_radius=0.04):
    """A tree: trunk, a patchy foliage shell, and n_fruits spherical fruits.

    Fruit depths inside the canopy vary, so their occlusion rates spread from
    nearly free-hanging to heavily hidden.
    """
    rng = np.random.default_rng(seed)
    origin = np.asarray(origin, dtype=np.float64)

    trunk_z = np.linspace(0.0, 1.0, 30)
    trunk = origin + np.stack([np.zeros_like(trunk_z), np.zeros_like(trunk_z), trunk_z], axis=1)
    parts.add(trunk, 0.95, 0.04, (0.35, 0.22, 0.12))

    canopy_center = origin + np.array([0.0, 0.0, 1.2])
    shell_dirs = rng.standard_normal((foliage, 3))
    shell_dirs /= np.linalg.norm(shell_dirs, axis=1, keepdims=True)
    shell_r = canopy_radius * (0.7 + 0.3 * rng.random(foliage))
    leaves = canopy_center + shell_dirs * shell_r[:, None]
    parts.add(leaves, 0.6, 0.035, (0.2, 0.5, 0.18))

    annotations = []
    for j in range(n_fruits):
        u = normalize(rng.standard_normal(3))
        depth_in_canopy = 0.55 + 0.5 * rng.random()  # some fruits poke out of the shell
        center = canopy_center + u * canopy_radius * depth_in_canopy
        axis = normalize(rng.standard_normal(3))
        annotations.append(
            make_fruit(parts, f"{tree_id}_F{j:02d}", tree_id, center, fruit_radius, axis,
                       seed=int(rng.integers(1 << 31)))
        )
    box = Aabb(origin + np.array([-1.2, -1.2, -0.2]), origin + np.array([1.2, 1.2, 2.4]))
    return annotations, box


class Orchard:
    def __init__(self, scene, annotations, boxes, splits):
        self.scene = scene
        self.annotations = annotations  # list of FruitAnnotation
        self.boxes = boxes  # tree_id -> Aabb
        self.splits = splits  # tree_id -> split name


def make_orchard(n_trees=3, fruits_per_tree=3, seed=0, spacing=2.5) -> Orchard:
    """Row of synthetic trees with disjoint crop boxes and a train/val/test split."""
    parts = SceneParts()
    rng = np.random.default_rng(seed)
    annotations = []
    boxes = {}
    for t in range(n_trees):
        tree_id = f"T{t + 1:02d}"
        origin = np.array([0.0, t * spacing, 0.0])
        anns, box = make_tree(parts, tree_id, origin, fruits_per_tree,
                              seed=int(rng.integers(1 << 31)))
        annotations.extend(anns)
        boxes[tree_id] = box

    tree_ids = sorted(boxes)
    splits = {}
    for i, tid in enumerate(tree_ids):
        if n_trees >= 3 and i == len(tree_ids) - 1:
            splits[tid] = "test"
        elif n_trees >= 2 and i == len(tree_ids) - 2:
            splits[tid] = "val"
        else:
            splits[tid] = "train"
    return Orchard(parts.scene(), annotations, boxes, splits)


def paper_scale_split(tree_ids):
    """10 train / 2 val / 1 test assignment over 13 trees (or scaled to fewer)."""
    tree_ids = sorted(tree_ids)
    n = len(tree_ids)
    n_test = 1
    n_val = min(2, max(0, n - 1))
    splits = {}
    for i, tid in enumerate(tree_ids):
        if i < n - n_test - n_val:
            splits[tid] = "train"
        elif i < n - n_test:
            splits[tid] = "val"
        else:
            splits[tid] = "test"
    return splits


def default_intrinsics(width=200, height=150, focal=180.0) -> Intrinsics:
    return Intrinsics(fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
                      width=width, height=height)


def look_at_camera(center, target, intrinsics, camera_id="cam", up=(0.0, 0.0, 1.0)) -> CameraModel:
    """Camera at `center` looking toward `target` (+Z forward, +Y down)."""
    center = np.asarray(center, dtype=np.float64)
    fwd = normalize(np.asarray(target, dtype=np.float64) - center)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right = normalize(right)
    down = np.cross(fwd, right)
    r_c2w = np.stack([right, down, fwd], axis=1)
    return CameraModel(
        intrinsics=intrinsics,
        pose=CameraPose(rotation=matrix_to_quat(r_c2w), translation=center),
        id=camera_id,
    )


def perfect_predictions(labels, confidence=1.0):
    """Predictions that copy each label's camera-frame box and axis exactly."""
    return [
        Prediction(
            camera_id=lab.camera_id,
            confidence=confidence,
            box=OrientedBox(center=lab.obb_camera.center, extents=lab.obb_camera.extents,
                            rotation=lab.obb_camera.box_rotation),
            axis=lab.obb_camera.axis,
        )
        for lab in labels
    ]
