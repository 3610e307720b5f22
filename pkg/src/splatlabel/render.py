"""Software splatting rasterizer and point-cloud depth rendering.

The rasterizer projects each 3D Gaussian to a 2D screen-space Gaussian
(covariance J W Sigma W^T J^T plus a 0.3 px^2 isotropic dilation), culls
against the frustum and a 3-sigma screen extent, sorts front to back by the
camera-frame depth of the center (ties broken by input index), and alpha
composites per pixel in 16x16 tiles. Depth output is the opacity-normalized
expected depth: sum(z_i * w_i) / sum(w_i) with compositing weights
w_i = alpha_i' * T_i, zeroed where the accumulated weight stays below 1e-6.
Compositing stops once transmittance drops below 1e-4.

Everything is plain float64 numpy evaluated in a fixed order, so renders are
bitwise reproducible, including across worker thread counts (tiles write
disjoint output regions).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .cameras import CameraModel
from .splats import PointCloud, SplatScene

TILE = 16
NEAR_LIMIT = 1e-4  # meters; Gaussians closer than this are culled
COV_DILATION = 0.3  # px^2 added to both screen-space variances
EXTENT_SIGMA = 3.0
T_STOP = 1e-4
WEIGHT_FLOOR = 1e-6
_CHUNK = 128

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)

DEPTH_UNIT_MM = 1000.0
DEPTH_PNG_MAX = 65535


@dataclass(frozen=True)
class RgbImage:
    """RGB raster, values in [0, 1], shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError("RgbImage data must have shape (h, w, 3)")
        object.__setattr__(self, "data", arr)

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    def save_png(self, path):
        arr = np.clip(np.round(self.data * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(path)

    @staticmethod
    def load_png(path) -> "RgbImage":
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
        return RgbImage(arr)


@dataclass(frozen=True)
class DepthImage:
    """Per-pixel depth in meters; 0 marks pixels without content."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("DepthImage data must have shape (h, w)")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("depth must be finite and >= 0")
        object.__setattr__(self, "data", arr)

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    def save_png(self, path):
        # 16-bit grayscale, value = millimeters clamped to the uint16 range
        mm = np.clip(np.round(self.data * DEPTH_UNIT_MM), 0, DEPTH_PNG_MAX).astype(np.uint16)
        Image.fromarray(mm).save(path)

    @staticmethod
    def load_png(path) -> "DepthImage":
        img = Image.open(path)
        arr = np.asarray(img, dtype=np.float64)
        return DepthImage(arr / DEPTH_UNIT_MM)


def write_sidecar(image_path, camera_id, sh_degree=None, extra=None):
    """JSON sidecar naming the camera an image was rendered from."""
    meta = {"camera_id": camera_id}
    if sh_degree is not None:
        meta["sh_degree"] = sh_degree
    if extra:
        meta.update(extra)
    Path(image_path).with_suffix(".json").write_text(json.dumps(meta, indent=2))


def evaluate_sh(coeffs, view_dir):
    """Color from real spherical harmonics along unit view directions.

    coeffs: (..., k, 3) with k in {1, 4, 9, 16}; view_dir: (..., 3), unit norm.
    Adds the 0.5 offset used by splat assets and clamps to [0, 1].
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    view_dir = np.asarray(view_dir, dtype=np.float64)
    k = coeffs.shape[-2]
    if k not in (1, 4, 9, 16):
        raise ValueError(f"unsupported SH coefficient count {k} (degree must be 0..3)")
    x, y, z = view_dir[..., 0], view_dir[..., 1], view_dir[..., 2]
    color = SH_C0 * coeffs[..., 0, :]
    if k >= 4:
        color = (
            color
            - SH_C1 * y[..., None] * coeffs[..., 1, :]
            + SH_C1 * z[..., None] * coeffs[..., 2, :]
            - SH_C1 * x[..., None] * coeffs[..., 3, :]
        )
    if k >= 9:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        color = (
            color
            + SH_C2[0] * xy[..., None] * coeffs[..., 4, :]
            + SH_C2[1] * yz[..., None] * coeffs[..., 5, :]
            + SH_C2[2] * (2 * zz - xx - yy)[..., None] * coeffs[..., 6, :]
            + SH_C2[3] * xz[..., None] * coeffs[..., 7, :]
            + SH_C2[4] * (xx - yy)[..., None] * coeffs[..., 8, :]
        )
    if k >= 16:
        xx, yy, zz = x * x, y * y, z * z
        color = (
            color
            + SH_C3[0] * (y * (3 * xx - yy))[..., None] * coeffs[..., 9, :]
            + SH_C3[1] * (x * y * z)[..., None] * coeffs[..., 10, :]
            + SH_C3[2] * (y * (4 * zz - xx - yy))[..., None] * coeffs[..., 11, :]
            + SH_C3[3] * (z * (2 * zz - 3 * xx - 3 * yy))[..., None] * coeffs[..., 12, :]
            + SH_C3[4] * (x * (4 * zz - xx - yy))[..., None] * coeffs[..., 13, :]
            + SH_C3[5] * (z * (xx - yy))[..., None] * coeffs[..., 14, :]
            + SH_C3[6] * (x * (xx - 3 * yy))[..., None] * coeffs[..., 15, :]
        )
    return np.clip(color + 0.5, 0.0, 1.0)


def _preprocess(scene: SplatScene, camera: CameraModel):
    """Project, cull, and depth-sort; returns screen-space splat arrays."""
    k = camera.intrinsics
    cam_pts = camera.world_to_camera(scene.positions)
    z = cam_pts[:, 2]
    front = z > NEAR_LIMIT
    idx = np.nonzero(front)[0]
    if idx.size == 0:
        return None
    cam_pts = cam_pts[idx]
    z = z[idx]

    u = k.fx * cam_pts[:, 0] / z + k.cx
    v = k.fy * cam_pts[:, 1] / z + k.cy

    w2c = camera.rotation_c2w().T
    cov_cam = np.einsum("ij,njk,lk->nil", w2c, scene.covariances()[idx], w2c)

    jx = k.fx / z
    jy = k.fy / z
    jxz = -k.fx * cam_pts[:, 0] / (z * z)
    jyz = -k.fy * cam_pts[:, 1] / (z * z)
    # 2x2 screen covariance entries of J C J^T, J = [[jx,0,jxz],[0,jy,jyz]]
    a = (
        jx * jx * cov_cam[:, 0, 0]
        + 2 * jx * jxz * cov_cam[:, 0, 2]
        + jxz * jxz * cov_cam[:, 2, 2]
    ) + COV_DILATION
    b = (
        jx * jy * cov_cam[:, 0, 1]
        + jx * jyz * cov_cam[:, 0, 2]
        + jxz * jy * cov_cam[:, 1, 2]
        + jxz * jyz * cov_cam[:, 2, 2]
    )
    c = (
        jy * jy * cov_cam[:, 1, 1]
        + 2 * jy * jyz * cov_cam[:, 1, 2]
        + jyz * jyz * cov_cam[:, 2, 2]
    ) + COV_DILATION

    det = a * c - b * b
    valid = det > 1e-12
    mean_eig = 0.5 * (a + c)
    eig_max = mean_eig + np.sqrt(np.maximum(mean_eig * mean_eig - det, 0.0))
    radius = np.ceil(EXTENT_SIGMA * np.sqrt(np.maximum(eig_max, 0.0)))
    on_screen = (
        valid
        & (u + radius >= 0)
        & (u - radius <= k.width - 1)
        & (v + radius >= 0)
        & (v - radius <= k.height - 1)
    )
    if not np.any(on_screen):
        return None
    keep = np.nonzero(on_screen)[0]
    idx = idx[keep]

    view_dir = scene.positions[idx] - camera.pose.translation
    view_dir = view_dir / np.linalg.norm(view_dir, axis=1, keepdims=True)
    colors = evaluate_sh(scene.sh_coeffs[idx], view_dir)

    # front-to-back order by center depth, stable on original index for ties
    order = np.argsort(z[keep], kind="stable")
    inv_det = 1.0 / det[keep][order]
    return {
        "u": u[keep][order],
        "v": v[keep][order],
        "z": z[keep][order],
        "radius": radius[keep][order],
        "ia": c[keep][order] * inv_det,
        "ib": -b[keep][order] * inv_det,
        "ic": a[keep][order] * inv_det,
        "alpha": scene.opacities[idx][order],
        "color": colors[order],
    }


def _tile_lists(sp, width, height):
    """Assign sorted splats to the 16x16 tiles their extent touches."""
    ntx = -(-width // TILE)
    nty = -(-height // TILE)
    tx0 = np.clip(np.floor((sp["u"] - sp["radius"]) / TILE), 0, ntx - 1).astype(np.int64)
    tx1 = np.clip(np.floor((sp["u"] + sp["radius"]) / TILE), 0, ntx - 1).astype(np.int64)
    ty0 = np.clip(np.floor((sp["v"] - sp["radius"]) / TILE), 0, nty - 1).astype(np.int64)
    ty1 = np.clip(np.floor((sp["v"] + sp["radius"]) / TILE), 0, nty - 1).astype(np.int64)

    counts = (tx1 - tx0 + 1) * (ty1 - ty0 + 1)
    owners = np.repeat(np.arange(len(counts)), counts)
    # per-duplicate offset within its gaussian's tile rectangle
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    ncols = (tx1 - tx0 + 1)[owners]
    tile_x = tx0[owners] + offsets % ncols
    tile_y = ty0[owners] + offsets // ncols
    tile_id = tile_y * ntx + tile_x

    order = np.argsort(tile_id, kind="stable")  # keeps depth order within a tile
    tile_id = tile_id[order]
    owners = owners[order]
    starts = np.searchsorted(tile_id, np.arange(ntx * nty), side="left")
    ends = np.searchsorted(tile_id, np.arange(ntx * nty), side="right")
    return ntx, nty, owners, starts, ends


def _composite_tile(sp, members, px, py, rgb_out, depth_num, weight_sum):
    npx = px.size
    t = np.ones(npx)
    for lo in range(0, members.size, _CHUNK):
        sel = members[lo : lo + _CHUNK]
        du = sp["u"][sel][:, None] - px[None, :]
        dv = sp["v"][sel][:, None] - py[None, :]
        quad = 0.5 * (
            sp["ia"][sel][:, None] * du * du
            + 2.0 * sp["ib"][sel][:, None] * du * dv
            + sp["ic"][sel][:, None] * dv * dv
        )
        alpha = sp["alpha"][sel][:, None] * np.exp(-np.maximum(quad, 0.0))
        transmit = np.empty_like(alpha)
        transmit[0] = t
        if alpha.shape[0] > 1:
            np.cumprod(1.0 - alpha[:-1], axis=0, out=transmit[1:])
            transmit[1:] *= t
        w = alpha * transmit
        w[transmit < T_STOP] = 0.0
        rgb_out += w.T @ sp["color"][sel]
        depth_num += w.T @ sp["z"][sel]
        weight_sum += w.sum(axis=0)
        t = transmit[-1] * (1.0 - alpha[-1])
        if t.max() < T_STOP:
            break


def render_arrays(scene: SplatScene, camera: CameraModel, workers: int = 1):
    """Raw render: returns (rgb (h, w, 3), depth (h, w), weight (h, w))."""
    if len(scene) == 0:
        raise ValueError("cannot render an empty scene")
    k = camera.intrinsics
    h, w = k.height, k.width
    rgb = np.zeros((h, w, 3))
    depth_num = np.zeros((h, w))
    weight = np.zeros((h, w))

    sp = _preprocess(scene, camera)
    if sp is None:
        return rgb, depth_num, weight
    ntx, nty, owners, starts, ends = _tile_lists(sp, w, h)

    def run_tile(tid):
        if starts[tid] == ends[tid]:
            return
        ty, tx = divmod(tid, ntx)
        x0, y0 = tx * TILE, ty * TILE
        x1, y1 = min(x0 + TILE, w), min(y0 + TILE, h)
        ys, xs = np.mgrid[y0:y1, x0:x1]
        shape = ys.shape
        tile_rgb = np.zeros((ys.size, 3))
        tile_dnum = np.zeros(ys.size)
        tile_wsum = np.zeros(ys.size)
        _composite_tile(
            sp, owners[starts[tid] : ends[tid]], xs.ravel().astype(np.float64),
            ys.ravel().astype(np.float64), tile_rgb, tile_dnum, tile_wsum,
        )
        rgb[y0:y1, x0:x1] = tile_rgb.reshape(shape + (3,))
        depth_num[y0:y1, x0:x1] = tile_dnum.reshape(shape)
        weight[y0:y1, x0:x1] = tile_wsum.reshape(shape)

    tile_ids = range(ntx * nty)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_tile, tile_ids))
    else:
        for tid in tile_ids:
            run_tile(tid)

    depth = np.where(weight >= WEIGHT_FLOOR, depth_num / np.maximum(weight, WEIGHT_FLOOR), 0.0)
    return rgb, depth, weight


def render_scene(scene: SplatScene, camera: CameraModel, workers: int = 1):
    """Render RGB and opacity-normalized depth; background is black / depth 0."""
    rgb, depth, _ = render_arrays(scene, camera, workers=workers)
    return RgbImage(rgb), DepthImage(depth)


def _disc_offsets(radius: int):
    r = int(radius)
    span = np.arange(-r, r + 1)
    dx, dy = np.meshgrid(span, span)
    keep = dx * dx + dy * dy <= r * r
    return dx[keep], dy[keep]


def render_point_depth(cloud: PointCloud, camera: CameraModel, point_radius_px: int = 1) -> DepthImage:
    """Z-buffered depth image of a point cloud; each point is a filled disc.

    Pixels not covered by any point stay 0. A radius of 0 marks single pixels.
    """
    if point_radius_px < 0:
        raise ValueError("point radius must be >= 0")
    k = camera.intrinsics
    buf = np.full(k.height * k.width, np.inf)
    if len(cloud):
        cam_pts = camera.world_to_camera(cloud.points)
        z = cam_pts[:, 2]
        front = z > 1e-9
        if np.any(front):
            z = z[front]
            pts = cam_pts[front]
            px = np.rint(k.fx * pts[:, 0] / z + k.cx).astype(np.int64)
            py = np.rint(k.fy * pts[:, 1] / z + k.cy).astype(np.int64)
            for dx, dy in zip(*_disc_offsets(point_radius_px)):
                x = px + dx
                y = py + dy
                ok = (x >= 0) & (x < k.width) & (y >= 0) & (y < k.height)
                np.minimum.at(buf, y[ok] * k.width + x[ok], z[ok])
    buf[~np.isfinite(buf)] = 0.0
    return DepthImage(buf.reshape(k.height, k.width))
