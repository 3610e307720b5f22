"""HTTP backend for the browser annotation tool.

Serves a decimated view of the working point cloud in level-of-detail chunks
and persists fruit annotations. The display cloud keeps full-resolution
indices, so selections made in the browser always reference the original
cloud; posting a selection materializes the fruit's own PLY next to its
annotation JSON, in the exact format the rest of the pipeline reads.

Endpoints (all JSON):
  GET  /api/scene/meta                      cloud size, bounds, chunking
  GET  /api/scene/points?chunk=i            one LOD chunk (positions, colors,
                                            full-cloud indices)
  GET  /api/annotations                     all annotation records + status
  POST /api/annotations                     upsert {fruit_id, tree_id, calyx}
  GET  /api/annotations/{fruit_id}/points   stored selection indices
  POST /api/annotations/{fruit_id}/points   {indices: [...]} into the full cloud
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel, Field

from .annotate import MIN_FRUIT_POINTS
from .splats import PointCloud, load_point_cloud, save_point_cloud

MAX_DISPLAY_POINTS = 5_000_000
DEFAULT_CHUNK_SIZE = 200_000


class AnnotationIn(BaseModel):
    fruit_id: str = Field(min_length=1)
    tree_id: str = Field(min_length=1)
    calyx: list[float] = Field(min_length=3, max_length=3)


class PointsIn(BaseModel):
    indices: list[int]


class _Store:
    """Annotation persistence: one JSON (+ one PLY once points exist) per fruit."""

    def __init__(self, directory: Path, cloud: PointCloud):
        self.dir = directory
        self.cloud = cloud
        self.lock = threading.Lock()
        self.dir.mkdir(parents=True, exist_ok=True)

    def _path(self, fruit_id: str) -> Path:
        if "/" in fruit_id or "\\" in fruit_id or fruit_id.startswith("."):
            raise HTTPException(status_code=422, detail="invalid fruit_id")
        return self.dir / f"{fruit_id}.json"

    def read(self, fruit_id: str) -> dict | None:
        path = self._path(fruit_id)
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def upsert(self, record: AnnotationIn) -> dict:
        with self.lock:
            existing = self.read(record.fruit_id) or {}
            existing.update(
                fruit_id=record.fruit_id, tree_id=record.tree_id, calyx=list(record.calyx)
            )
            existing.setdefault("points_file", f"fruit_{record.fruit_id}.ply")
            self._path(record.fruit_id).write_text(json.dumps(existing, indent=2))
            return existing

    def set_points(self, fruit_id: str, indices: list[int]) -> dict:
        n = len(self.cloud)
        if len(indices) < MIN_FRUIT_POINTS:
            raise HTTPException(
                status_code=422,
                detail=f"selection has {len(indices)} points, needs >= {MIN_FRUIT_POINTS}",
            )
        idx = np.asarray(indices, dtype=np.int64)
        if idx.min() < 0 or idx.max() >= n:
            raise HTTPException(status_code=422, detail="point index out of range")
        with self.lock:
            record = self.read(fruit_id)
            if record is None:
                record = {
                    "fruit_id": fruit_id,
                    "tree_id": "",
                    "calyx": None,
                    "points_file": f"fruit_{fruit_id}.ply",
                }
            fruit_cloud = PointCloud(self.cloud.points[idx], self.cloud.colors[idx])
            save_point_cloud(self.dir / record["points_file"], fruit_cloud)
            record["point_indices"] = [int(i) for i in indices]
            self._path(fruit_id).write_text(json.dumps(record, indent=2))
            return record

    def list_records(self) -> list[dict]:
        records = []
        for path in sorted(self.dir.glob("*.json")):
            rec = json.loads(path.read_text())
            indices = rec.get("point_indices", [])
            rec["point_count"] = len(indices)
            rec["complete"] = bool(rec.get("calyx")) and len(indices) >= MIN_FRUIT_POINTS
            records.append(rec)
        return records


def create_app(cloud_path, annotations_dir, chunk_size=DEFAULT_CHUNK_SIZE,
               max_display_points=MAX_DISPLAY_POINTS, frontend_dir=None) -> FastAPI:
    cloud = load_point_cloud(cloud_path)
    n_full = len(cloud)
    if n_full == 0:
        raise ValueError("annotation cloud is empty")

    # decimate for display but remember the full-resolution index of each point
    if n_full > max_display_points:
        stride = -(-n_full // max_display_points)
        display_idx = np.arange(0, n_full, stride, dtype=np.int64)
    else:
        display_idx = np.arange(n_full, dtype=np.int64)
    n_display = display_idx.size
    chunk_count = max(1, -(-n_display // chunk_size))

    store = _Store(Path(annotations_dir), cloud)
    app = FastAPI(title="splatlabel annotation server")

    @app.get("/api/scene/meta")
    def scene_meta():
        return {
            "point_count": int(n_display),
            "full_point_count": int(n_full),
            "chunk_count": int(chunk_count),
            "chunk_size": int(chunk_size),
            "bounds": {
                "min": cloud.points.min(axis=0).tolist(),
                "max": cloud.points.max(axis=0).tolist(),
            },
            "min_fruit_points": MIN_FRUIT_POINTS,
        }

    @app.get("/api/scene/points")
    def scene_points(chunk: int = Query(ge=0)):
        if chunk >= chunk_count:
            raise HTTPException(status_code=404, detail=f"chunk {chunk} of {chunk_count}")
        # interleaved chunks: every chunk spans the whole cloud, so partial
        # loads already show a coarse version of everything
        members = display_idx[chunk::chunk_count]
        return {
            "chunk": chunk,
            "count": int(members.size),
            "full_indices": members.tolist(),
            "positions": cloud.points[members].tolist(),
            "colors": cloud.colors[members].tolist(),
        }

    @app.get("/api/annotations")
    def list_annotations():
        return {"annotations": store.list_records()}

    @app.post("/api/annotations")
    def upsert_annotation(record: AnnotationIn):
        return {"ok": True, "annotation": store.upsert(record)}

    @app.get("/api/annotations/{fruit_id}/points")
    def get_points(fruit_id: str):
        record = store.read(fruit_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"no annotation {fruit_id!r}")
        indices = record.get("point_indices", [])
        return {"fruit_id": fruit_id, "count": len(indices), "indices": indices}

    @app.post("/api/annotations/{fruit_id}/points")
    def post_points(fruit_id: str, body: PointsIn):
        record = store.set_points(fruit_id, body.indices)
        return {"ok": True, "count": len(record["point_indices"]),
                "points_file": record["points_file"]}

    if frontend_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="ui")

    return app
