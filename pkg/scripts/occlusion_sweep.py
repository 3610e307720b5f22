#!/usr/bin/env python3
"""Occlusion-rate sweep on the sphere-and-slab benchmark scene.

For each nominal occluder coverage, renders the scene, applies the
depth-differencing occlusion rule, and compares against an independent
ray-casting oracle on the analytic geometry. Prints a table and optionally
writes it as JSON.

Usage: python3 scripts/occlusion_sweep.py [--coverages 0 0.25 0.5 0.75 1.0]
"""

import argparse
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from splatlabel.annotate import compute_occlusion
from oracle_geometry import build_fixture, on_axis_camera, ray_cast_occlusion


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--coverages", type=float, nargs="+",
                    default=[0.0, 0.25, 0.5, 0.75, 1.0])
    ap.add_argument("--json-out")
    args = ap.parse_args()

    cam = on_axis_camera()
    rows = []
    print(f"{'coverage':>9} {'pipeline %':>11} {'oracle %':>9} {'diff':>7} {'s_T':>7} {'time':>6}")
    for coverage in args.coverages:
        t0 = time.time()
        scene, ann, x_edge = build_fixture(coverage)
        occ = compute_occlusion(ann, scene, cam)
        oracle = ray_cast_occlusion(ann, cam, x_edge)
        dt = time.time() - t0
        rows.append({"coverage": coverage, "pipeline": occ.occlusion,
                     "oracle": oracle, "s_T": occ.s_total, "seconds": dt})
        print(f"{coverage:>9.2f} {occ.occlusion:>11.2f} {oracle:>9.2f} "
              f"{occ.occlusion - oracle:>+7.2f} {occ.s_total:>7d} {dt:>5.1f}s")
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
