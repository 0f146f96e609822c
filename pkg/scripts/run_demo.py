#!/usr/bin/env python3
"""End-to-end pipeline on the synthetic demo workspace.

Generates the demo scene, builds a bank from its annotations, lifts the
scene, renders the held-out view, queries every bank entry, and reports
per-query IoU against the analytic ground truth. Everything goes through
the CLI, so this doubles as an integration smoke test.
"""

import argparse
import json
import sys
from pathlib import Path

from segsplat.cli import run_command


def sh(args):
    argv = [str(a) for a in args]
    print("+ segsplat " + " ".join(argv))
    code = run_command(argv)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("demo_out"))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    ws = args.out / "workspace"
    art = args.out / "artifacts"
    art.mkdir(parents=True, exist_ok=True)

    sh(["synth", "--out", ws, "--kind", "demo", "--seed", args.seed])
    sh(
        ["bank", "build", "--manifest", ws / "manifest.json", "--lambda", "1.0",
         "--seed", args.seed, "--out", art / "bank.bin", art / "maps"]
    )
    sh(
        ["lift", "--scene", ws / "scene.ply", "--manifest", ws / "manifest.json",
         "--maps", art / "maps", "--mode", "pixel", "--out", art / "lifted.ply"]
    )
    sh(
        ["render", "--scene", art / "lifted.ply", "--bank", art / "bank.bin",
         "--camera", ws / "cameras" / "heldout.json", "--config", ws / "settings.json",
         "--features-out", art / "features.bin",
         "--out", art / "rgb.png", art / "semantic.bin"]
    )
    mask_args = []
    for row in range(3):
        name = f"band_{row + 1}"
        sh(
            ["query", "--features", art / "features.bin",
             "--query", ws / "queries.emb", "--query-row", row,
             "--canon", ws / "canonicals.emb", "--tau", "10",
             "--out", art / f"relevancy_{name}.png", art / f"mask_{name}.png"]
        )
        mask_args += ["--mask", name, art / f"mask_{name}.png", ws / "gt" / f"{name}.png"]
    sh(["eval", *mask_args, "--out", art / "report.json"])

    report = json.loads((art / "report.json").read_text())
    print(f"\nmIoU = {report['miou']:.4f}")
    for name, value in report["per_query_iou"].items():
        print(f"  {name}: IoU = {value:.4f}")
    print(f"artifacts in {art}")


if __name__ == "__main__":
    main()
