#!/usr/bin/env python3
"""Sensitivity of neighbor-label agreement to the tile ground footprint.

Resamples the same synthetic city at several tile side lengths (same pixel
count, different m/px), extracts baseline codes, and reports leave-one-out
k-NN label accuracy per footprint. Prints a small table to stdout.
"""

import argparse
import dataclasses
import json
import tempfile
from pathlib import Path

import numpy as np

from urbanenv.atlas import load_city, load_consolidation_map
from urbanenv.features import extract_baseline
from urbanenv.imagery import FetchConfig, load_cached_tile, materialize_synthetic
from urbanenv.neighbors import build_index, knn_query
from urbanenv.sampler import SamplerConfig, sample_city
from urbanenv.synthcity import make_city


def knn_accuracy(fm, k: int = 5) -> float:
    idx = build_index(fm)
    label_of = dict(zip(fm.ids, fm.class_ids))
    correct = 0
    for i in range(fm.n):
        hits = [h for h, _ in knn_query(idx, fm.values[i], k + 1) if h != fm.ids[i]][:k]
        votes = np.bincount([label_of[h] for h in hits], minlength=10)
        correct += int(votes.argmax() == fm.class_ids[i])
    return correct / fm.n


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sides", type=float, nargs="+", default=[134.4, 268.8, 537.6],
                        help="tile side lengths in meters")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        atlas = Path(tmp) / "city.geojson"
        atlas.write_text(json.dumps(make_city(polygons_per_class=6, seed=args.seed)))
        ds = load_city(atlas, "synthville", load_consolidation_map())

        print(f"{'side_m':>8} {'tiles':>6} {'knn_acc':>8}")
        for side in args.sides:
            cfg = dataclasses.replace(
                SamplerConfig(seed=args.seed, polygons_per_class=60,
                              max_images_per_polygon=5).with_tile_side_m(side))
            records, _ = sample_city(ds, cfg)
            fetch_cfg = FetchConfig(api_key="offline",
                                    cache_dir=Path(tmp) / f"cache_{side:g}")
            materialize_synthetic(records, fetch_cfg, seed=args.seed)
            images = [load_cached_tile(r.tile, fetch_cfg) for r in records]
            fm = extract_baseline(records, images)
            print(f"{side:8.1f} {fm.n:6d} {knn_accuracy(fm):8.3f}")


if __name__ == "__main__":
    main()
