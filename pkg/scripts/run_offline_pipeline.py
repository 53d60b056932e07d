#!/usr/bin/env python3
"""End-to-end offline run on a synthetic city: ingest, sample, grid,
synthetic fetch, baseline features, embedding, neighbors, rasters.

Everything lands under --out; no network access. Useful both as a smoke
test and as a worked example of the subcommand pipeline.
"""

import argparse
import json
import sys
from pathlib import Path

from urbanenv.cli import main as cli_main
from urbanenv.synthcity import make_city


def run(argv) -> None:
    rc = cli_main(argv)
    if rc != 0:
        sys.exit(rc)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/offline", help="output root")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--polygons-per-class", type=int, default=6)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atlas = out / "city.geojson"
    atlas.write_text(json.dumps(make_city(polygons_per_class=args.polygons_per_class,
                                          seed=args.seed)))
    config = out / "run.json"
    config.write_text(json.dumps({
        "seed": args.seed,
        "sampler": {"polygons_per_class": 60, "max_images_per_polygon": 5,
                    "grid_rows": 40, "grid_cols": 40, "seed": args.seed},
        "tsne": {"perplexity": 20.0, "n_iter": 400, "theta": 0.0, "seed": args.seed},
    }))

    base = ["--config", str(config), "--seed", str(args.seed)]
    city = ["--atlas", str(atlas), "--city", "synthville"]
    cache = str(out / "cache")

    run(["ingest", *city, *base, "--out", str(out / "ingest")])
    run(["stats", *city, *base, "--out", str(out / "stats")])
    run(["sample", *city, *base, "--out", str(out / "sample")])
    manifest = str(out / "sample" / "manifest.csv")
    run(["grid", *city, *base, "--out", str(out / "grid")])
    run(["fetch", "--manifest", manifest, "--cache", cache, "--offline",
         *base, "--out", str(out / "fetch")])
    run(["extract", "--manifest", manifest, "--cache", cache,
         *base, "--out", str(out / "extract")])
    uef = str(out / "extract" / "features.uef.csv")
    run(["embed", "--uef", uef, *base, "--out", str(out / "embed")])
    run(["knn", "--space", "codes", "--uef", uef, "--k", "6",
         *base, "--out", str(out / "knn_codes")])
    run(["knn", "--space", "embedding", "--embedding", str(out / "embed" / "embedding.csv"),
         "--k", "5", *base, "--out", str(out / "knn_embedding")])
    run(["raster", "--grid", str(out / "grid" / "grid.csv"),
         *base, "--out", str(out / "raster")])
    print(f"pipeline complete under {out}")


if __name__ == "__main__":
    main()
