#!/usr/bin/env python3
"""End-to-end desk-scale run: synthetic orchard -> datasets -> evaluation.

Generates a small orchard, builds the rendered and original-image datasets,
scores a perfect predictor against the produced labels, and prints the
report summaries. Everything lands under the given output directory.

Usage: python3 scripts/desk_scale_demo.py --out /tmp/demo [--trees 3]
"""

import argparse
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from splatlabel import synthetic as syn
from splatlabel.annotate import read_labels_jsonl, write_labels_jsonl
from splatlabel.cli import main as cli
from splatlabel.evaluate import write_predictions_jsonl


def run(out: Path, trees: int, fruits: int, seed: int):
    t0 = time.time()
    cli(["synth", "--out", str(out), "--trees", str(trees),
         "--fruits-per-tree", str(fruits), "--seed", str(seed),
         "--image-width", "320", "--image-height", "240", "--original-cameras", "2"])

    cli(["build-dataset", "--scene", str(out / "scene.ply"),
         "--trees", str(out / "trees.json"), "--annotations", str(out / "annotations"),
         "--mode", "rendered", "--trajectory", str(out / "trajectory.json"),
         "--occlusion-limit", "95", "--split-config", str(out / "splits.json"),
         "--out", str(out / "ds_rendered")])

    cli(["build-dataset", "--scene", str(out / "scene.ply"),
         "--trees", str(out / "trees.json"), "--annotations", str(out / "annotations"),
         "--mode", "original", "--cameras", str(out / "cameras.json"),
         "--images", str(out / "raw"), "--patch-size", "160",
         "--occlusion-limit", "95", "--split-config", str(out / "splits.json"),
         "--out", str(out / "ds_original")])

    for mode in ("rendered", "original"):
        ds = out / f"ds_{mode}"
        labels = []
        for split_dir in sorted(p for p in ds.iterdir() if p.is_dir()):
            labels.extend(read_labels_jsonl(split_dir / "labels.jsonl"))
        write_labels_jsonl(out / f"gt_{mode}.jsonl", labels)
        write_predictions_jsonl(out / f"preds_{mode}.jsonl", syn.perfect_predictions(labels))
        cli(["eval", "--gt", str(out / f"gt_{mode}.jsonl"),
             "--pred", str(out / f"preds_{mode}.jsonl"),
             "--iou", "0.5", "--test-occlusion-limit", "95",
             "--report", str(out / f"report_{mode}.json")])
        report = json.loads((out / f"report_{mode}.json").read_text())
        print(f"[{mode}] F1={report['f1']:.3f} neutral={report['neutral_f1']:.3f} "
              f"labels={report['counts']['tp']}")
    print(f"done in {time.time() - t0:.1f}s, outputs in {out}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--trees", type=int, default=3)
    ap.add_argument("--fruits-per-tree", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    run(Path(args.out), args.trees, args.fruits_per_tree, args.seed)
