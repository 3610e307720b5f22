import numpy as np
import pytest
from fastapi.testclient import TestClient

from splatlabel import synthetic as syn
from splatlabel.annotate import load_annotation
from splatlabel.server import create_app
from splatlabel.splats import save_point_cloud


@pytest.fixture()
def api(tmp_path):
    cloud = syn.sphere_cloud((0, 0, 1.0), 0.5, 900, seed=0)
    save_point_cloud(tmp_path / "cloud.ply", cloud)
    app = create_app(tmp_path / "cloud.ply", tmp_path / "annotations", chunk_size=250)
    return TestClient(app), tmp_path, cloud


class TestSceneStreaming:
    def test_meta(self, api):
        client, _, cloud = api
        meta = client.get("/api/scene/meta").json()
        assert meta["point_count"] == 900
        assert meta["full_point_count"] == 900
        assert meta["chunk_count"] == 4  # ceil(900 / 250)
        assert meta["bounds"]["min"][2] == pytest.approx(0.5, abs=0.05)

    def test_chunk_handshake(self, api):
        # [oracle] count handshake: chunk counts sum to the advertised total and
        # the indices partition the cloud
        client, _, cloud = api
        meta = client.get("/api/scene/meta").json()
        seen = []
        total = 0
        for i in range(meta["chunk_count"]):
            chunk = client.get(f"/api/scene/points?chunk={i}").json()
            assert chunk["count"] == len(chunk["positions"]) == len(chunk["full_indices"])
            total += chunk["count"]
            seen.extend(chunk["full_indices"])
            got = np.array(chunk["positions"])
            assert np.allclose(got, cloud.points[chunk["full_indices"]], atol=1e-9)
        assert total == meta["point_count"]
        assert sorted(seen) == list(range(900))

    def test_chunk_out_of_range(self, api):
        client, _, _ = api
        assert client.get("/api/scene/points?chunk=99").status_code == 404


class TestAnnotations:
    def test_upsert_and_points_roundtrip(self, api):
        client, tmp_path, cloud = api
        r = client.post("/api/annotations", json={
            "fruit_id": "T01_F00", "tree_id": "T01", "calyx": [0.5, 0.0, 1.0]})
        assert r.status_code == 200
        indices = list(range(100, 220))
        r = client.post("/api/annotations/T01_F00/points", json={"indices": indices})
        assert r.status_code == 200

        back = client.get("/api/annotations/T01_F00/points").json()
        assert back["indices"] == indices
        listing = client.get("/api/annotations").json()["annotations"]
        assert len(listing) == 1
        assert listing[0]["complete"] is True

        # the saved annotation is directly loadable by the pipeline
        ann = load_annotation(tmp_path / "annotations" / "T01_F00.json")
        assert ann.fruit_id == "T01_F00"
        assert len(ann.points) == 120
        assert np.allclose(ann.points.points, cloud.points[indices], atol=1e-5)

    def test_too_few_points_rejected(self, api):
        client, _, _ = api
        client.post("/api/annotations", json={
            "fruit_id": "f", "tree_id": "t", "calyx": [0, 0, 1]})
        r = client.post("/api/annotations/f/points", json={"indices": [1, 2, 3]})
        assert r.status_code == 422
        assert "50" in r.text

    def test_out_of_range_indices_rejected(self, api):
        client, _, _ = api
        r = client.post("/api/annotations/f/points", json={"indices": list(range(850, 950))})
        assert r.status_code == 422

    def test_invalid_fruit_id_rejected(self, api):
        client, _, _ = api
        r = client.post("/api/annotations", json={
            "fruit_id": "../evil", "tree_id": "t", "calyx": [0, 0, 0]})
        assert r.status_code == 422

    def test_validation_error_names_field(self, api):
        client, _, _ = api
        r = client.post("/api/annotations", json={"fruit_id": "x", "tree_id": "t"})
        assert r.status_code == 422
        assert "calyx" in r.text

    def test_unknown_fruit_points_404(self, api):
        client, _, _ = api
        assert client.get("/api/annotations/nope/points").status_code == 404


class TestUiSavedAnnotationsDriveTheBuild:
    def test_build_dataset_from_api_saved_annotations(self, tmp_path):
        # save fruits through the HTTP contract, then run the dataset build on
        # exactly those files
        from splatlabel.annotate import load_annotation_dir
        from splatlabel.datasets import build_dataset
        from splatlabel.splats import Aabb
        from test_datasets import tiny_trajectory

        orch = syn.make_orchard(n_trees=1, fruits_per_tree=2, seed=21)
        cloud = syn.sphere_cloud((0, 0, 1.2), 0.45, 2000, seed=1)
        save_point_cloud(tmp_path / "cloud.ply", cloud)
        app = create_app(tmp_path / "cloud.ply", tmp_path / "ann")
        client = TestClient(app)

        rng = np.random.default_rng(0)
        for i, ann in enumerate(orch.annotations):
            # emulate the browser flow: upsert record, then post a selection
            client.post("/api/annotations", json={
                "fruit_id": ann.fruit_id, "tree_id": ann.tree_id,
                "calyx": ann.calyx.tolist()})
            picked = rng.choice(len(cloud), 80, replace=False)
            r = client.post(f"/api/annotations/{ann.fruit_id}/points",
                            json={"indices": [int(j) for j in picked]})
            assert r.status_code == 200

        saved = load_annotation_dir(tmp_path / "ann")
        assert len(saved) == 2
        manifests = build_dataset(
            orch.scene, saved, {"T01": Aabb((-2, -2, -2), (2, 2, 3))}, {"T01": "train"},
            occlusion_limit=100.0, out_dir=tmp_path / "ds", mode="rendered",
            trajectory_config=tiny_trajectory(syn.default_intrinsics(96, 72, 90.0),
                                              yaw_steps=2),
        )
        assert manifests["train"].counts["images"] == 2
