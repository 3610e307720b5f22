"""Gaussian splat scenes: PLY ingest/export, cropping, and point-cloud sampling.

A scene is a flat, immutable set of 3D Gaussians held in numpy arrays. Splat
PLY files follow the community layout: per-vertex x/y/z, pre-activation
opacity (a logit), log-space scale_0..2, rot_0..3 (w, x, y, z) and spherical
harmonic color coefficients f_dc_0..2 plus optional f_rest_*. Activations are
applied at parse time, so everything downstream works with real opacities and
metric scales.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import quat_to_matrix, quats_to_matrices

SH_C0 = 0.28209479177387814

_PLY_DTYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "uchar": "u1",
    "uint8": "u1",
    "char": "i1",
    "int8": "i1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}

# f_rest length -> SH degree (channel-planar layout, 3 * ((deg+1)^2 - 1) floats)
_REST_TO_DEGREE = {0: 0, 9: 1, 24: 2, 45: 3}


class PlyFormatError(ValueError):
    """Raised when a PLY blob cannot be parsed into the expected layout."""


@dataclass(frozen=True)
class Gaussian3D:
    """One splat: world position, activated opacity, metric scale, unit quaternion."""

    position: np.ndarray
    opacity: float
    scale: np.ndarray
    rotation: np.ndarray
    sh_coeffs: np.ndarray  # (K, 3) with K = (sh_degree + 1) ** 2

    def covariance(self):
        r = quat_to_matrix(self.rotation)
        m = r * self.scale[None, :]
        return m @ m.T


class SplatScene:
    """Immutable set of Gaussians stored as parallel numpy arrays."""

    def __init__(self, positions, opacities, scales, rotations, sh_coeffs, sh_degree=None):
        positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
        n = positions.shape[0]
        opacities = np.ascontiguousarray(opacities, dtype=np.float64).reshape(n)
        scales = np.ascontiguousarray(scales, dtype=np.float64).reshape(n, 3)
        rotations = np.ascontiguousarray(rotations, dtype=np.float64).reshape(n, 4)
        sh_coeffs = np.ascontiguousarray(sh_coeffs, dtype=np.float64)
        if sh_coeffs.ndim != 3 or sh_coeffs.shape[0] != n or sh_coeffs.shape[2] != 3:
            raise ValueError("sh_coeffs must have shape (n, k, 3)")
        if sh_degree is None:
            sh_degree = int(np.sqrt(sh_coeffs.shape[1])) - 1
        if (sh_degree + 1) ** 2 != sh_coeffs.shape[1]:
            raise ValueError(f"sh_coeffs count {sh_coeffs.shape[1]} does not match degree {sh_degree}")

        if n:
            if not np.all(np.isfinite(positions)):
                raise ValueError("non-finite position")
            if np.any(scales <= 0):
                raise ValueError("scale components must be strictly positive")
            if np.any((opacities < 0) | (opacities > 1)):
                raise ValueError("opacity must lie in [0, 1]")
            norms = np.linalg.norm(rotations, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("rotations must be unit quaternions")

        self.positions = positions
        self.opacities = opacities
        self.scales = scales
        self.rotations = rotations
        self.sh_coeffs = sh_coeffs
        self.sh_degree = int(sh_degree)
        for arr in (positions, opacities, scales, rotations, sh_coeffs):
            arr.setflags(write=False)

    def __len__(self):
        return self.positions.shape[0]

    def __getitem__(self, i) -> Gaussian3D:
        return Gaussian3D(
            position=self.positions[i],
            opacity=float(self.opacities[i]),
            scale=self.scales[i],
            rotation=self.rotations[i],
            sh_coeffs=self.sh_coeffs[i],
        )

    def base_colors(self):
        """Degree-0 RGB per Gaussian (view-independent part), clamped to [0, 1]."""
        return np.clip(0.5 + SH_C0 * self.sh_coeffs[:, 0, :], 0.0, 1.0)

    def covariances(self):
        """World-frame 3x3 covariances, shape (n, 3, 3)."""
        r = quats_to_matrices(self.rotations)
        m = r * self.scales[:, None, :]
        return np.einsum("nij,nkj->nik", m, m)

    def take(self, mask_or_indices) -> "SplatScene":
        return SplatScene(
            self.positions[mask_or_indices],
            self.opacities[mask_or_indices],
            self.scales[mask_or_indices],
            self.rotations[mask_or_indices],
            self.sh_coeffs[mask_or_indices],
            sh_degree=self.sh_degree,
        )


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box, inclusive on both bounds."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", np.asarray(self.min, dtype=np.float64).reshape(3))
        object.__setattr__(self, "max", np.asarray(self.max, dtype=np.float64).reshape(3))
        if np.any(self.min > self.max):
            raise ValueError("box min must be <= max componentwise")

    def contains(self, points):
        points = np.asarray(points, dtype=np.float64)
        return np.all((points >= self.min) & (points <= self.max), axis=-1)

    @property
    def center(self):
        return 0.5 * (self.min + self.max)


@dataclass(frozen=True)
class PointCloud:
    """Colored point set; colors are RGB in [0, 1]."""

    points: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        cols = np.ascontiguousarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] != cols.shape[0]:
            raise ValueError("points and colors must have matching length")
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("non-finite point coordinates")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", cols)

    def __len__(self):
        return self.points.shape[0]


def _parse_ply_header(blob: bytes):
    """Returns (vertex_count, [(name, dtype_str)], data_offset, format)."""
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply") or end < 0:
        raise PlyFormatError("malformed header: missing ply magic or end_header")
    header = blob[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    count = None
    props = []
    in_vertex = False
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise PlyFormatError("list properties are not supported for vertex data")
            if parts[1] not in _PLY_DTYPES:
                raise PlyFormatError(f"unsupported property type {parts[1]!r}")
            props.append((parts[2], _PLY_DTYPES[parts[1]]))
    if fmt is None or count is None or not props:
        raise PlyFormatError("malformed header: format, vertex element or properties missing")
    return count, props, end + len(b"end_header\n"), fmt


def _read_vertex_table(blob: bytes, fmt: str, count: int, props, offset: int):
    dtype = np.dtype(props)
    if fmt == "binary_little_endian":
        expected = count * dtype.itemsize
        body = blob[offset : offset + expected]
        if len(body) < expected:
            raise PlyFormatError(
                f"truncated body: expected {expected} bytes for {count} vertices, got {len(body)}"
            )
        return np.frombuffer(body, dtype=dtype, count=count)
    if fmt == "ascii":
        text = blob[offset:].decode("ascii")
        flat = np.loadtxt(io.StringIO(text), dtype=np.float64, ndmin=2)
        if flat.shape[0] < count or flat.shape[1] != len(props):
            raise PlyFormatError("ascii body does not match declared vertex count/properties")
        table = np.zeros(count, dtype=dtype)
        for j, (name, _) in enumerate(props):
            table[name] = flat[:count, j]
        return table
    raise PlyFormatError(f"unsupported PLY format {fmt!r}")


def _require_finite(values, name):
    bad = ~np.isfinite(values)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise PlyFormatError(f"non-finite value in property {name!r} at vertex {idx}")


def parse_splat_file(blob: bytes) -> SplatScene:
    """Parse a binary little-endian 3DGS PLY blob into a SplatScene.

    Opacity and scale activations (sigmoid, exp) are applied here; quaternions
    are normalized. Raises PlyFormatError naming the property and vertex index
    on bad input.
    """
    count, props, offset, fmt = _parse_ply_header(blob)
    if fmt != "binary_little_endian":
        raise PlyFormatError(f"splat PLY must be binary_little_endian, got {fmt!r}")
    names = [p[0] for p in props]
    required = ["x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2",
                "rot_0", "rot_1", "rot_2", "rot_3", "f_dc_0", "f_dc_1", "f_dc_2"]
    for name in required:
        if name not in names:
            raise PlyFormatError(f"missing required property {name!r}")
    rest_names = sorted(
        (n for n in names if n.startswith("f_rest_")), key=lambda n: int(n.split("_")[-1])
    )
    if len(rest_names) not in _REST_TO_DEGREE:
        raise PlyFormatError(f"unsupported f_rest_* count {len(rest_names)}")
    degree = _REST_TO_DEGREE[len(rest_names)]

    table = _read_vertex_table(blob, fmt, count, props, offset)

    def col(name):
        values = np.asarray(table[name], dtype=np.float64)
        _require_finite(values, name)
        return values

    positions = np.stack([col("x"), col("y"), col("z")], axis=1)
    opacities = 1.0 / (1.0 + np.exp(-col("opacity")))
    scales = np.exp(np.stack([col(f"scale_{i}") for i in range(3)], axis=1))
    rotations = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    norms = np.linalg.norm(rotations, axis=1)
    if np.any(norms == 0):
        idx = int(np.argmax(norms == 0))
        raise PlyFormatError(f"zero-norm quaternion in property 'rot_*' at vertex {idx}")
    rotations = rotations / norms[:, None]

    k = (degree + 1) ** 2
    sh = np.zeros((count, k, 3))
    sh[:, 0, 0] = col("f_dc_0")
    sh[:, 0, 1] = col("f_dc_1")
    sh[:, 0, 2] = col("f_dc_2")
    if rest_names:
        rest = np.stack([col(n) for n in rest_names], axis=1)  # (n, 3*(k-1)) channel-planar
        sh[:, 1:, :] = rest.reshape(count, 3, k - 1).transpose(0, 2, 1)
    return SplatScene(positions, opacities, scales, rotations, sh, sh_degree=degree)


def serialize_splat_scene(scene: SplatScene) -> bytes:
    """Inverse of parse_splat_file: writes pre-activation values as float32."""
    n = len(scene)
    k = scene.sh_coeffs.shape[1]
    rest_count = 3 * (k - 1)
    names = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(rest_count)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")

    table = np.zeros(n, dtype=[(name, "<f4") for name in names])
    table["x"], table["y"], table["z"] = scene.positions.T
    alpha = np.clip(scene.opacities, 1e-7, 1 - 1e-7)
    table["opacity"] = np.log(alpha / (1 - alpha))
    for i in range(3):
        table[f"scale_{i}"] = np.log(scene.scales[:, i])
    for i in range(4):
        table[f"rot_{i}"] = scene.rotations[:, i]
    for c, name in enumerate(["f_dc_0", "f_dc_1", "f_dc_2"]):
        table[name] = scene.sh_coeffs[:, 0, c]
    if rest_count:
        rest = scene.sh_coeffs[:, 1:, :].transpose(0, 2, 1).reshape(n, rest_count)
        for i in range(rest_count):
            table[f"f_rest_{i}"] = rest[:, i]
    return "\n".join(header).encode("ascii") + b"\n" + table.tobytes()


def load_scene(path) -> SplatScene:
    return parse_splat_file(Path(path).read_bytes())


def save_scene(path, scene: SplatScene):
    Path(path).write_bytes(serialize_splat_scene(scene))


def crop_scene(scene: SplatScene, box: Aabb) -> SplatScene:
    """Keep exactly the Gaussians whose center lies in the box (boundary inclusive)."""
    return scene.take(box.contains(scene.positions))


def sample_point_cloud(scene: SplatScene, n_points: int, seed: int) -> PointCloud:
    """Draw a colored point cloud from the scene's Gaussian mixture.

    Each point picks a Gaussian with probability proportional to
    opacity * (sx * sy * sz)^(1/3), then samples its 3D normal distribution.
    Colors come from the degree-0 coefficients only. Deterministic per seed.
    """
    if len(scene) == 0:
        raise ValueError("cannot sample points from an empty scene")
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    weights = scene.opacities * np.cbrt(scene.scales.prod(axis=1))
    total = weights.sum()
    if total <= 0:
        raise ValueError("all Gaussians have zero sampling weight")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(scene), size=n_points, p=weights / total)
    z = rng.standard_normal((n_points, 3))
    rot = quats_to_matrices(scene.rotations[idx])
    offsets = np.einsum("nij,nj->ni", rot, scene.scales[idx] * z)
    points = scene.positions[idx] + offsets
    colors = scene.base_colors()[idx]
    return PointCloud(points, colors)


def save_point_cloud(path, cloud: PointCloud, ascii_format=False):
    """Write x,y,z float32 + red,green,blue uchar PLY (binary by default)."""
    n = len(cloud)
    fmt = "ascii" if ascii_format else "binary_little_endian"
    header = [
        "ply",
        f"format {fmt} 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    if ascii_format:
        lines = [
            f"{p[0]:.8g} {p[1]:.8g} {p[2]:.8g} {c[0]} {c[1]} {c[2]}"
            for p, c in zip(cloud.points, rgb)
        ]
        Path(path).write_bytes(("\n".join(header + lines) + "\n").encode("ascii"))
        return
    table = np.zeros(
        n,
        dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
               ("red", "u1"), ("green", "u1"), ("blue", "u1")],
    )
    table["x"], table["y"], table["z"] = cloud.points.T.astype(np.float32)
    table["red"], table["green"], table["blue"] = rgb.T
    Path(path).write_bytes("\n".join(header).encode("ascii") + b"\n" + table.tobytes())


def load_point_cloud(path) -> PointCloud:
    """Read a point cloud PLY (binary little-endian or ascii) with xyz + rgb."""
    blob = Path(path).read_bytes()
    count, props, offset, fmt = _parse_ply_header(blob)
    names = [p[0] for p in props]
    for name in ("x", "y", "z"):
        if name not in names:
            raise PlyFormatError(f"missing required property {name!r}")
    table = _read_vertex_table(blob, fmt, count, props, offset)
    points = np.stack([np.asarray(table[n], dtype=np.float64) for n in ("x", "y", "z")], axis=1)
    _require_finite(points, "x/y/z")
    if all(n in names for n in ("red", "green", "blue")):
        cols = np.stack(
            [np.asarray(table[n], dtype=np.float64) for n in ("red", "green", "blue")], axis=1
        )
        scale = 255.0 if any(dict(props)[n] == "u1" for n in ("red", "green", "blue")) else 1.0
        colors = np.clip(cols / scale, 0.0, 1.0)
    else:
        colors = np.full((count, 3), 0.5)
    return PointCloud(points, colors)


def load_tree_boxes(path):
    """Read tree crop boxes: {"trees": [{"tree_id", "min", "max"}, ...]} -> dict."""
    data = json.loads(Path(path).read_text())
    boxes = {}
    for entry in data["trees"]:
        boxes[entry["tree_id"]] = Aabb(entry["min"], entry["max"])
    return boxes


def save_tree_boxes(path, boxes):
    data = {
        "trees": [
            {"tree_id": tid, "min": box.min.tolist(), "max": box.max.tolist()}
            for tid, box in boxes.items()
        ]
    }
    Path(path).write_text(json.dumps(data, indent=2))
