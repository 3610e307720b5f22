"""Detection and pose scoring against ground-truth labels.

Detections are matched per image by 3D oriented-box IoU at a threshold
(default 0.5), processing predictions in descending confidence and pairing
each greedily with the unmatched ground truth of highest IoU. Besides the
plain F1 this module computes the neutral F1, which takes recall against the
occlusion-filtered labels but precision against the full label set, so that
detecting a real-but-unlabeled fruit is not penalized.

Pose errors: Euclidean center distance, the angle between axis vectors
(arccos of the dot product, in degrees), and a pitch/yaw decomposition with
elevation measured from the XY plane and azimuth about +Z.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import normalize, quat_to_matrix

DEFAULT_IOU_THRESHOLD = 0.5
DEFAULT_BOOTSTRAP_SAMPLES = 1000
ZERO_ORIENTATION_AXIS = np.array([1.0, 0.0, 0.0])  # elevation 0, azimuth 0

# occlusion bins, percent, high to low; top bin closed at 100, low bin pools < 30
OCCLUSION_BIN_EDGES = [(90.0, 100.0), (80.0, 90.0), (70.0, 80.0), (60.0, 70.0),
                       (50.0, 60.0), (40.0, 50.0), (30.0, 40.0), (0.0, 30.0)]

_PLANE_EPS = 1e-12


@dataclass(frozen=True)
class OrientedBox:
    center: np.ndarray
    extents: np.ndarray  # full side lengths
    rotation: np.ndarray  # quaternion (w, x, y, z)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "extents", np.asarray(self.extents, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(4))

    @property
    def volume(self):
        return float(np.prod(self.extents))


def as_oriented_box(obj) -> OrientedBox:
    if isinstance(obj, OrientedBox):
        return obj
    for attr in ("obb_camera", "box"):
        inner = getattr(obj, attr, None)
        if inner is not None:
            return as_oriented_box(inner)
    rotation = getattr(obj, "box_rotation", None)
    if rotation is None:
        rotation = obj.rotation
    return OrientedBox(center=obj.center, extents=obj.extents, rotation=rotation)


@dataclass(frozen=True)
class Prediction:
    camera_id: str
    confidence: float
    box: OrientedBox
    axis: np.ndarray

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=np.float64).reshape(3)
        n = np.linalg.norm(axis)
        if abs(n - 1.0) > 1e-3:
            raise ValueError(f"prediction axis norm {n:.4f} is not ~1")
        object.__setattr__(self, "axis", axis / n)
        if np.any(self.box.extents <= 0):
            raise ValueError("prediction extents must be positive")


@dataclass
class MatchResult:
    pairs: list = field(default_factory=list)  # (prediction, ground truth, iou)
    false_positives: list = field(default_factory=list)
    false_negatives: list = field(default_factory=list)

    @property
    def tp(self):
        return len(self.pairs)

    @property
    def fp(self):
        return len(self.false_positives)

    @property
    def fn(self):
        return len(self.false_negatives)

    def extend(self, other: "MatchResult"):
        self.pairs.extend(other.pairs)
        self.false_positives.extend(other.false_positives)
        self.false_negatives.extend(other.false_negatives)


# ---------------------------------------------------------------------------
# Oriented-box IoU: clip box a's polytope by box b's six face half-spaces and
# measure the remaining volume exactly (divergence theorem over the faces).

def _box_faces(box: OrientedBox):
    h = box.extents / 2.0
    r = quat_to_matrix(box.rotation)
    corners = {}
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                local = np.array([sx * h[0], sy * h[1], sz * h[2]])
                corners[(sx, sy, sz)] = box.center + r @ local
    quads = [
        [(1, -1, -1), (1, 1, -1), (1, 1, 1), (1, -1, 1)],      # +x
        [(-1, -1, -1), (-1, -1, 1), (-1, 1, 1), (-1, 1, -1)],  # -x
        [(-1, 1, -1), (-1, 1, 1), (1, 1, 1), (1, 1, -1)],      # +y
        [(-1, -1, -1), (1, -1, -1), (1, -1, 1), (-1, -1, 1)],  # -y
        [(-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)],      # +z
        [(-1, -1, -1), (-1, 1, -1), (1, 1, -1), (1, -1, -1)],  # -z
    ]
    return [np.array([corners[c] for c in quad]) for quad in quads]


def _box_halfspaces(box: OrientedBox):
    h = box.extents / 2.0
    r = quat_to_matrix(box.rotation)
    planes = []
    for k in range(3):
        n = r[:, k]
        d = float(n @ box.center)
        planes.append((n, d + h[k]))
        planes.append((-n, -d + h[k]))
    return planes


def _clip_faces(faces, n, d, eps=_PLANE_EPS):
    """Clip an outward-oriented convex polytope by the half-space n.x <= d."""
    kept = []
    cut_points = []
    for face in faces:
        dist = face @ n - d
        if np.all(dist <= eps):
            kept.append(face)
            continue
        if np.all(dist >= -eps):
            continue
        out = []
        m = len(face)
        for i in range(m):
            a, b = face[i], face[(i + 1) % m]
            da, db = dist[i], dist[(i + 1) % m]
            a_in, b_in = da <= eps, db <= eps
            if a_in:
                out.append(a)
                if abs(da) <= eps:
                    cut_points.append(a)
            if a_in != b_in and abs(da) > eps and abs(db) > eps:
                t = da / (da - db)
                p = a + t * (b - a)
                out.append(p)
                cut_points.append(p)
        if len(out) >= 3:
            kept.append(np.array(out))
    if len(cut_points) >= 3 and kept:
        cap = _order_cap(np.array(cut_points), n)
        if cap is not None:
            kept.append(cap)
    return kept


def _order_cap(points, n, tol=1e-9):
    """Deduplicate and order the cut points CCW about +n (outward cap face)."""
    uniq = [points[0]]
    for p in points[1:]:
        if all(np.linalg.norm(p - q) > tol for q in uniq):
            uniq.append(p)
    if len(uniq) < 3:
        return None
    pts = np.array(uniq)
    centroid = pts.mean(axis=0)
    seed = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = normalize(np.cross(n, seed))
    v = np.cross(n, u)
    rel = pts - centroid
    angles = np.arctan2(rel @ v, rel @ u)
    return pts[np.argsort(angles)]


def _polytope_volume(faces):
    vol = 0.0
    for face in faces:
        v0 = face[0]
        for i in range(1, len(face) - 1):
            vol += v0 @ np.cross(face[i], face[i + 1])
    return abs(vol) / 6.0


def obb_iou(a, b) -> float:
    """Exact IoU of two oriented boxes in [0, 1]."""
    box_a, box_b = as_oriented_box(a), as_oriented_box(b)
    va, vb = box_a.volume, box_b.volume
    if va < 1e-12 or vb < 1e-12:
        raise ValueError("degenerate box: near-zero volume")
    faces = _box_faces(box_a)
    for n, d in _box_halfspaces(box_b):
        faces = _clip_faces(faces, n, d)
        if not faces:
            return 0.0
    inter = min(_polytope_volume(faces), va, vb)
    return inter / (va + vb - inter)


# ---------------------------------------------------------------------------
# Matching and detection scores.

def match_detections(preds, gts, iou_threshold=DEFAULT_IOU_THRESHOLD) -> MatchResult:
    """Greedy confidence-ordered matching within one image.

    Each prediction (highest confidence first, ties by input order) pairs with
    the unmatched ground truth of highest IoU at or above the threshold.
    Leftover predictions are false positives, leftover ground truths false
    negatives.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    gt_boxes = [as_oriented_box(g) for g in gts]
    taken = [False] * len(gts)
    result = MatchResult()
    for i in order:
        pred_box = as_oriented_box(preds[i])
        best_j, best_iou = -1, 0.0
        for j, gt_box in enumerate(gt_boxes):
            if taken[j]:
                continue
            iou = obb_iou(pred_box, gt_box)
            if iou >= iou_threshold and iou > best_iou:
                best_j, best_iou = j, iou
        if best_j >= 0:
            taken[best_j] = True
            result.pairs.append((preds[i], gts[best_j], best_iou))
        else:
            result.false_positives.append(preds[i])
    result.false_negatives = [g for j, g in enumerate(gts) if not taken[j]]
    return result


def _prf(tp, fp, fn):
    precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 1.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return precision, recall, f1


def f1_scores(match: MatchResult):
    """(precision, recall, F1) with the empty-set conventions documented in _prf."""
    return _prf(match.tp, match.fp, match.fn)


def neutral_f1(preds, filtered_gts, full_gts, iou_threshold=DEFAULT_IOU_THRESHOLD) -> float:
    """F1 from recall against filtered labels and precision against all labels."""
    _check_subset(filtered_gts, full_gts)
    filtered_match = match_detections(preds, filtered_gts, iou_threshold)
    full_match = match_detections(preds, full_gts, iou_threshold)
    _, recall, _ = f1_scores(filtered_match)
    precision, _, _ = f1_scores(full_match)
    return 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0


def _gt_key(gt):
    fid = getattr(gt, "fruit_id", None)
    cid = getattr(gt, "camera_id", None)
    if fid is not None and cid is not None:
        return (cid, fid)
    box = as_oriented_box(gt)
    return (tuple(np.round(box.center, 9)), tuple(np.round(box.extents, 9)))


def _check_subset(filtered_gts, full_gts):
    full_keys = {_gt_key(g) for g in full_gts}
    for g in filtered_gts:
        if _gt_key(g) not in full_keys:
            raise ValueError("filtered ground truth is not a subset of the full set")


# ---------------------------------------------------------------------------
# Pose errors.

def position_error(gt_center, pred_center) -> float:
    """Euclidean distance between box centers, meters."""
    gt_center = np.asarray(gt_center, dtype=np.float64)
    pred_center = np.asarray(pred_center, dtype=np.float64)
    return float(np.linalg.norm(gt_center - pred_center))


def orientation_error(gt_axis, pred_axis) -> float:
    """Angle between axis vectors in degrees (dot product clamped to [-1, 1])."""
    v = normalize(gt_axis)
    w = normalize(pred_axis)
    return float(np.degrees(np.arccos(np.clip(v @ w, -1.0, 1.0))))


def pitch_yaw_error(gt_axis, pred_axis):
    """(pitch, yaw) error in degrees: elevation from the XY plane, azimuth about +Z
    (wrapped to [0, 180])."""
    v = normalize(gt_axis)
    w = normalize(pred_axis)

    def elevation(a):
        return np.degrees(np.arcsin(np.clip(a[2], -1.0, 1.0)))

    def azimuth(a):
        return np.degrees(np.arctan2(a[1], a[0]))

    pitch = abs(elevation(v) - elevation(w))
    yaw = abs(azimuth(v) - azimuth(w)) % 360.0
    if yaw > 180.0:
        yaw = 360.0 - yaw
    return float(pitch), float(yaw)


def bin_by_occlusion(instances):
    """Split instances into the 8 occlusion bins, most occluded first.

    Bins cover [90, 100] then 10-percent steps down to [30, 40), with
    everything below 30 pooled into one bin. Bounds are lower-inclusive.
    Instances may be numbers or objects with an `occlusion` attribute.
    """
    bins = OrderedDict((edges, []) for edges in OCCLUSION_BIN_EDGES)
    for inst in instances:
        occ = float(getattr(inst, "occlusion", inst if np.isscalar(inst) else np.nan))
        if not (0.0 <= occ <= 100.0):
            raise ValueError(f"occlusion {occ} outside [0, 100]")
        for lo, hi in OCCLUSION_BIN_EDGES:
            if occ >= lo and (occ < hi or hi == 100.0):
                bins[(lo, hi)].append(inst)
                break
    return bins


def bootstrap_interval(samples, statistic=None, n_resamples=DEFAULT_BOOTSTRAP_SAMPLES,
                       level=0.95, seed=0):
    """Percentile bootstrap interval of a statistic over resampled units.

    `samples` is any sequence of resampling units (numbers, per-image tuples);
    `statistic` maps one resample to a scalar (default: mean). Deterministic
    for a fixed seed.
    """
    n = len(samples)
    if n == 0:
        raise ValueError("bootstrap needs at least one sample")
    if statistic is None:
        statistic = np.mean
    rng = np.random.default_rng(seed)
    arr = samples if isinstance(samples, np.ndarray) else None
    stats = np.empty(n_resamples)
    for b in range(n_resamples):
        idx = rng.integers(0, n, n)
        if arr is not None:
            resample = arr[idx]
        else:
            resample = [samples[i] for i in idx]
        stats[b] = statistic(resample)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(stats, [100 * alpha, 100 * (1 - alpha)])
    return float(lo), float(hi)


def zero_orientation_baseline(gt_axes, reference_axis=None) -> float:
    """Mean angular error of always predicting the fixed zero-orientation axis."""
    gt_axes = np.asarray(gt_axes, dtype=np.float64).reshape(-1, 3)
    if gt_axes.shape[0] == 0:
        raise ValueError("no ground-truth axes")
    ref = normalize(ZERO_ORIENTATION_AXIS if reference_axis is None else reference_axis)
    units = gt_axes / np.linalg.norm(gt_axes, axis=1, keepdims=True)
    angles = np.degrees(np.arccos(np.clip(units @ ref, -1.0, 1.0)))
    return float(angles.mean())


# ---------------------------------------------------------------------------
# Full report over prediction and label files.

@dataclass
class EvalBin:
    occlusion_range: tuple
    gt_count: int
    recall: float
    mean_position_error: float | None
    mean_orientation_error: float | None


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    neutral_f1: float
    tp: int
    fp: int
    fn: int
    n_images: int
    position_errors: np.ndarray
    orientation_errors: np.ndarray
    pitch_errors: np.ndarray
    yaw_errors: np.ndarray
    bins: list
    intervals: dict
    config: dict

    def to_dict(self):
        def stats(arr):
            if arr.size == 0:
                return {"mean": None, "median": None, "count": 0}
            return {"mean": float(arr.mean()), "median": float(np.median(arr)),
                    "count": int(arr.size)}

        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "neutral_f1": self.neutral_f1,
            "counts": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "images": self.n_images},
            "position_error_m": stats(self.position_errors),
            "orientation_error_deg": stats(self.orientation_errors),
            "pitch_error_deg": stats(self.pitch_errors),
            "yaw_error_deg": stats(self.yaw_errors),
            "distributions": {
                "position_error_m": self.position_errors.tolist(),
                "orientation_error_deg": self.orientation_errors.tolist(),
                "pitch_error_deg": self.pitch_errors.tolist(),
                "yaw_error_deg": self.yaw_errors.tolist(),
            },
            "occlusion_bins": [
                {
                    "range": list(b.occlusion_range),
                    "gt_count": b.gt_count,
                    "recall": b.recall,
                    "mean_position_error_m": b.mean_position_error,
                    "mean_orientation_error_deg": b.mean_orientation_error,
                }
                for b in self.bins
            ],
            "bootstrap_95": self.intervals,
            "config": self.config,
        }


def _group_by_camera(items):
    groups = {}
    for item in items:
        groups.setdefault(item.camera_id, []).append(item)
    return groups


def evaluate_predictions(gts, preds, iou_threshold=DEFAULT_IOU_THRESHOLD,
                         occlusion_limit=100.0, n_resamples=DEFAULT_BOOTSTRAP_SAMPLES,
                         seed=0) -> EvalReport:
    """Score predictions against labels, with occlusion filtering and bootstrap CIs.

    Detection metrics bootstrap over images; pose errors bootstrap over matched
    instances. The neutral F1 matches the same predictions against the
    unfiltered label set to recompute precision.
    """
    filtered = [g for g in gts if g.occlusion <= occlusion_limit]
    gt_groups = _group_by_camera(filtered)
    full_groups = _group_by_camera(gts)
    pred_groups = _group_by_camera(preds)
    camera_ids = sorted(set(gt_groups) | set(pred_groups) | set(full_groups))

    per_image = []  # (tp, fp, fn, tp_full, fp_full) per camera id
    match_all = MatchResult()
    for cid in camera_ids:
        p = pred_groups.get(cid, [])
        g = gt_groups.get(cid, [])
        g_full = full_groups.get(cid, [])
        m = match_detections(p, g, iou_threshold)
        m_full = match_detections(p, g_full, iou_threshold)
        match_all.extend(m)
        per_image.append((m.tp, m.fp, m.fn, m_full.tp, m_full.fp))

    counts = np.array(per_image, dtype=np.int64).reshape(-1, 5)
    precision, recall, f1 = _prf(*counts[:, :3].sum(axis=0)) if len(per_image) else (1.0, 1.0, 0.0)
    full_precision = _prf(counts[:, 3].sum(), counts[:, 4].sum(), 0)[0] if len(per_image) else 1.0
    nf1 = (2 * full_precision * recall / (full_precision + recall)
           if (full_precision + recall) > 0 else 0.0)

    pos_err = np.array([position_error(g.obb_camera.center, p.box.center)
                        for p, g, _ in match_all.pairs])
    ori_err = np.array([orientation_error(g.obb_camera.axis, p.axis)
                        for p, g, _ in match_all.pairs])
    py = [pitch_yaw_error(g.obb_camera.axis, p.axis) for p, g, _ in match_all.pairs]
    pitch_err = np.array([e[0] for e in py])
    yaw_err = np.array([e[1] for e in py])

    # per-bin recall and pose errors, binned on ground-truth occlusion
    matched_keys = {_gt_key(g) for _, g, _ in match_all.pairs}
    pair_by_key = {_gt_key(g): (p, g) for p, g, _ in match_all.pairs}
    bins = []
    for (lo, hi), members in bin_by_occlusion(filtered).items():
        n_gt = len(members)
        hits = [g for g in members if _gt_key(g) in matched_keys]
        bin_pos, bin_ori = [], []
        for g in hits:
            p, g2 = pair_by_key[_gt_key(g)]
            bin_pos.append(position_error(g2.obb_camera.center, p.box.center))
            bin_ori.append(orientation_error(g2.obb_camera.axis, p.axis))
        bins.append(EvalBin(
            occlusion_range=(lo, hi),
            gt_count=n_gt,
            recall=(len(hits) / n_gt) if n_gt else 1.0,
            mean_position_error=float(np.mean(bin_pos)) if bin_pos else None,
            mean_orientation_error=float(np.mean(bin_ori)) if bin_ori else None,
        ))

    def f1_stat(rows):
        rows = np.asarray(rows).reshape(-1, 5)
        return _prf(rows[:, 0].sum(), rows[:, 1].sum(), rows[:, 2].sum())[2]

    def recall_stat(rows):
        rows = np.asarray(rows).reshape(-1, 5)
        return _prf(rows[:, 0].sum(), rows[:, 1].sum(), rows[:, 2].sum())[1]

    def neutral_stat(rows):
        rows = np.asarray(rows).reshape(-1, 5)
        r = _prf(rows[:, 0].sum(), rows[:, 1].sum(), rows[:, 2].sum())[1]
        p = _prf(rows[:, 3].sum(), rows[:, 4].sum(), 0)[0]
        return 2 * p * r / (p + r) if (p + r) > 0 else 0.0

    intervals = {}
    if len(per_image):
        intervals["f1"] = bootstrap_interval(counts, f1_stat, n_resamples, seed=seed)
        intervals["recall"] = bootstrap_interval(counts, recall_stat, n_resamples, seed=seed + 1)
        intervals["neutral_f1"] = bootstrap_interval(counts, neutral_stat, n_resamples, seed=seed + 2)
    if pos_err.size:
        intervals["position_error_m"] = bootstrap_interval(pos_err, None, n_resamples, seed=seed + 3)
        intervals["orientation_error_deg"] = bootstrap_interval(
            ori_err, None, n_resamples, seed=seed + 4)

    return EvalReport(
        precision=precision, recall=recall, f1=f1, neutral_f1=nf1,
        tp=int(counts[:, 0].sum()), fp=int(counts[:, 1].sum()), fn=int(counts[:, 2].sum()),
        n_images=len(camera_ids),
        position_errors=pos_err, orientation_errors=ori_err,
        pitch_errors=pitch_err, yaw_errors=yaw_err,
        bins=bins, intervals=intervals,
        config={
            "iou_threshold": iou_threshold,
            "occlusion_limit": occlusion_limit,
            "bootstrap_resamples": n_resamples,
            "seed": seed,
            "zero_orientation_axis": ZERO_ORIENTATION_AXIS.tolist(),
        },
    )


# ---------------------------------------------------------------------------
# Prediction files: JSON lines with camera-frame boxes, meters.

def prediction_to_dict(pred: Prediction) -> dict:
    return {
        "camera_id": pred.camera_id,
        "confidence": pred.confidence,
        "center": pred.box.center.tolist(),
        "extents": pred.box.extents.tolist(),
        "q": pred.box.rotation.tolist(),
        "axis": pred.axis.tolist(),
    }


def prediction_from_dict(d) -> Prediction:
    return Prediction(
        camera_id=str(d["camera_id"]),
        confidence=float(d["confidence"]),
        box=OrientedBox(center=np.array(d["center"]), extents=np.array(d["extents"]),
                        rotation=np.array(d["q"])),
        axis=np.array(d["axis"]),
    )


def write_predictions_jsonl(path, preds):
    with open(path, "w") as fh:
        for pred in preds:
            fh.write(json.dumps(prediction_to_dict(pred)) + "\n")


def read_predictions_jsonl(path):
    preds = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                preds.append(prediction_from_dict(json.loads(line)))
    return preds


def write_report(path, report: EvalReport):
    Path(path).write_text(json.dumps(report.to_dict(), indent=2))
