#!/usr/bin/env python3
"""Write procedurally generated scene pairs for the data pipeline.

Each scene becomes two rasters next to each other, <name>.hr10.s2sr with
the four 10m bands and <name>.lr20.s2sr with the six 20m bands, which is
the layout `s2sr dataset-prep` expects.
"""

import argparse
from pathlib import Path

from s2sr.dataset import Landscape
from s2sr.raster import write_raster
from s2sr.synthetic import generate_scene


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, required=True, help="scene directory")
    parser.add_argument("--per-landscape", type=int, default=2)
    parser.add_argument("--size10", type=int, default=480, help="edge on the 10m grid")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    seed = args.seed
    for kind in Landscape:
        for i in range(args.per_landscape):
            hr10, lr20 = generate_scene(kind, size10=args.size10, seed=seed)
            seed += 1
            name = f"{kind.value}_{i:02d}"
            write_raster(hr10, args.out / f"{name}.hr10.s2sr")
            write_raster(lr20, args.out / f"{name}.lr20.s2sr")
            print(f"{name}: {hr10.height}x{hr10.width} at 10m")
    print(f"wrote {4 * args.per_landscape} scene pairs to {args.out}")


if __name__ == "__main__":
    main()
