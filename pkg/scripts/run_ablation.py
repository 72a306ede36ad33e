#!/usr/bin/env python3
"""Drive the full ablation grid on a small synthetic dataset.

Generates scenes, prepares crops, then runs the `ablate` subcommand with
its default grid: a stage-count sweep, a patch-by-window sweep, and a
loss sweep.  Results land in <out>/ablation.csv, one row per config.
"""

import argparse
import sys
from pathlib import Path

from s2sr.cli import main as cli_main
from s2sr.dataset import Landscape
from s2sr.raster import write_raster
from s2sr.synthetic import generate_scene


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("ablation_run"))
    parser.add_argument("--size10", type=int, default=96)
    parser.add_argument("--crop", type=int, default=48)
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    scenes = args.out / "scenes"
    scenes.mkdir(parents=True, exist_ok=True)
    for i, kind in enumerate(Landscape):
        hr10, lr20 = generate_scene(kind, size10=args.size10, seed=args.seed + i)
        write_raster(hr10, scenes / f"{kind.value}_00.hr10.s2sr")
        write_raster(lr20, scenes / f"{kind.value}_00.lr20.s2sr")

    data = args.out / "data"
    code = cli_main(
        [
            "dataset-prep", "--scenes", str(scenes), "--out", str(data),
            "--crop", str(args.crop), "--seed", str(args.seed),
            "--splits", "12,4",
        ]
    )
    if code:
        sys.exit(code)
    sys.exit(
        cli_main(
            [
                "ablate", "--manifest", str(data / "manifest.json"),
                "--out", str(args.out / "grid"),
                "--epochs", str(args.epochs), "--seed", str(args.seed),
            ]
        )
    )


if __name__ == "__main__":
    main()
