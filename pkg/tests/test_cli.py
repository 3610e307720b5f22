import json

import pytest

from splatlabel.cli import main
from splatlabel.splats import load_point_cloud, load_scene


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = main([
        "synth", "--out", str(out), "--trees", "2", "--fruits-per-tree", "2",
        "--seed", "5", "--image-width", "160", "--image-height", "120",
        "--original-cameras", "1",
    ])
    assert code == 0
    return out


class TestSynth:
    def test_outputs_exist(self, synth_dir):
        for name in ("scene.ply", "trees.json", "splits.json", "cameras.json",
                     "trajectory.json"):
            assert (synth_dir / name).exists()
        assert len(list((synth_dir / "annotations").glob("*.json"))) == 4
        assert len(list((synth_dir / "raw").glob("*.png"))) == 1

    def test_scene_parses(self, synth_dir):
        scene = load_scene(synth_dir / "scene.ply")
        assert len(scene) > 100


class TestSceneCommands:
    def test_crop(self, synth_dir, tmp_path, capsys):
        assert main(["crop", "--scene", str(synth_dir / "scene.ply"),
                     "--trees", str(synth_dir / "trees.json"),
                     "--out", str(tmp_path / "crops")]) == 0
        crops = sorted((tmp_path / "crops").glob("*.ply"))
        assert [p.name for p in crops] == ["T01.ply", "T02.ply"]
        scene = load_scene(synth_dir / "scene.ply")
        parts = [load_scene(p) for p in crops]
        assert sum(len(p) for p in parts) == len(scene)

    def test_convert(self, synth_dir, tmp_path):
        out = tmp_path / "cloud.ply"
        assert main(["convert", "--scene", str(synth_dir / "scene.ply"),
                     "--points", "5000", "--seed", "1", "--out", str(out)]) == 0
        assert len(load_point_cloud(out)) == 5000

    def test_render_with_cameras(self, synth_dir, tmp_path):
        out = tmp_path / "renders"
        assert main(["render", "--scene", str(synth_dir / "scene.ply"),
                     "--cameras", str(synth_dir / "cameras.json"),
                     "--out", str(out)]) == 0
        pngs = list(out.glob("*.png"))
        assert len(pngs) == 2  # rgb + depth for the single camera
        sidecars = list(out.glob("*.json"))
        assert len(sidecars) == 2  # one per PNG
        for sidecar in sidecars:
            meta = json.loads(sidecar.read_text())
            assert "camera_id" in meta and "sh_degree" in meta

    def test_render_requires_one_source(self, synth_dir, tmp_path):
        with pytest.raises(SystemExit):
            main(["render", "--scene", str(synth_dir / "scene.ply"),
                  "--out", str(tmp_path / "x")])

    def test_occlusion_jsonl(self, synth_dir, tmp_path):
        out = tmp_path / "occ.jsonl"
        assert main(["occlusion", "--scene", str(synth_dir / "scene.ply"),
                     "--annotations", str(synth_dir / "annotations"),
                     "--cameras", str(synth_dir / "cameras.json"),
                     "--out", str(out)]) == 0
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        assert rows
        for row in rows:
            assert 0.0 <= row["occlusion"] <= 100.0
            assert row["s_O"] <= row["s_T"]

    def test_patch_command(self, synth_dir, tmp_path):
        raw = next((synth_dir / "raw").glob("*.png"))
        out = tmp_path / "patches"
        assert main(["patch", "--image", str(raw),
                     "--cameras", str(synth_dir / "cameras.json"),
                     "--camera-id", raw.stem, "--patch-size", "80",
                     "--out", str(out)]) == 0
        # 160x120 with 80 px patches -> 2 x 2
        assert len(list(out.glob("*.png"))) == 4
        cams = json.loads((out / "patch_cameras.json").read_text())
        assert len(cams) == 4
        assert all(c["width"] == 80 for c in cams)


class TestEndToEndCli:
    def test_build_eval_cycle(self, synth_dir, tmp_path, capsys):
        from splatlabel.annotate import read_labels_jsonl
        from splatlabel.evaluate import write_predictions_jsonl
        from splatlabel import synthetic as syn

        ds = tmp_path / "ds"
        assert main(["build-dataset", "--scene", str(synth_dir / "scene.ply"),
                     "--trees", str(synth_dir / "trees.json"),
                     "--annotations", str(synth_dir / "annotations"),
                     "--mode", "rendered",
                     "--trajectory", str(synth_dir / "trajectory.json"),
                     "--occlusion-limit", "100",
                     "--split-config", str(synth_dir / "splits.json"),
                     "--out", str(ds)]) == 0
        manifest = json.loads((ds / "train" / "manifest.json").read_text())
        assert manifest["counts"]["images"] == 4  # one tree, 4 yaw steps

        labels = read_labels_jsonl(ds / "train" / "labels.jsonl")
        preds = syn.perfect_predictions(labels)
        write_predictions_jsonl(tmp_path / "preds.jsonl", preds)
        report_path = tmp_path / "report.json"
        assert main(["eval", "--gt", str(ds / "train" / "labels.jsonl"),
                     "--pred", str(tmp_path / "preds.jsonl"),
                     "--iou", "0.5", "--test-occlusion-limit", "100",
                     "--bootstrap", "50", "--report", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert report["f1"] == 1.0
        assert report["config"]["iou_threshold"] == 0.5

    def test_subsample_cli(self, synth_dir, tmp_path):
        ds = tmp_path / "ds2"
        main(["build-dataset", "--scene", str(synth_dir / "scene.ply"),
              "--trees", str(synth_dir / "trees.json"),
              "--annotations", str(synth_dir / "annotations"),
              "--mode", "rendered",
              "--trajectory", str(synth_dir / "trajectory.json"),
              "--occlusion-limit", "100",
              "--split-config", str(synth_dir / "splits.json"),
              "--out", str(ds)])
        manifest = json.loads((ds / "train" / "manifest.json").read_text())
        total = manifest["counts"]["labels"]
        assert total >= 2
        assert main(["subsample", "--manifest", str(ds / "train" / "manifest.json"),
                     "--target", str(max(total // 2, 1)), "--seed", "0",
                     "--out", str(tmp_path / "sub")]) == 0
        sub = json.loads((tmp_path / "sub" / "manifest.json").read_text())
        assert sub["counts"]["labels"] >= max(total // 2, 1)
