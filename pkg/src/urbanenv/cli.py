"""Command-line entry point wiring the pipeline stages together.

One process, one subcommand per stage: ingest, stats, sample, grid, fetch,
extract, embed, knn, confusion, transfer, similarity, raster, augment.
Every run echoes its configuration and writes a manifest (inputs, config
hash, seed, versions) into the output directory so any artifact can be
reproduced from the manifest alone. No timestamps — reruns are
byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    AnalysisError,
    confusion_matrix,
    intercity_similarity,
    transfer_matrix,
    write_confusion,
    write_similarity,
    write_transfer,
)
from .atlas import (
    AtlasParseError,
    CLASS_NAMES,
    EmptyDatasetError,
    class_area_distribution,
    load_consolidation_map,
    load_city,
    load_palette,
    write_rejects_report,
)
from .augment import export_augmented
from .embedding import TsneConfig, TsneError, read_embedding, run_tsne, write_embedding, write_kl_trace
from .features import FeatureValidationError, extract_baseline, read_predictions, read_uef, write_uef
from .imagery import (
    ConfigurationError,
    FetchConfig,
    FetchError,
    QuotaExhaustedError,
    TileFetcher,
    load_cached_tile,
    materialize_synthetic,
)
from .neighbors import (
    NeighborError,
    build_index,
    centroid_galleries,
    knn_query,
    write_gallery_manifest,
    write_query_results,
)
from .raster import RasterError, render_class_map, render_probability_maps, write_legend, write_ppm
from .sampler import (
    SamplerConfig,
    build_truth_grid,
    footprints_geojson,
    read_grid,
    read_manifest,
    sample_city,
    write_grid,
    write_manifest,
)

USAGE_ERROR = 2

_DOMAIN_ERRORS = (
    AtlasParseError,
    AnalysisError,
    ConfigurationError,
    EmptyDatasetError,
    FeatureValidationError,
    FetchError,
    NeighborError,
    QuotaExhaustedError,
    RasterError,
    TsneError,
    ValueError,
    FileNotFoundError,
)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Consolidated run configuration; JSON sections map onto the module
    config dataclasses, and --seed overrides every embedded seed."""

    sampler: SamplerConfig = dataclasses.field(default_factory=SamplerConfig)
    fetch: FetchConfig = dataclasses.field(default_factory=FetchConfig)
    tsne: TsneConfig = dataclasses.field(default_factory=TsneConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fetch"]["cache_dir"] = str(d["fetch"]["cache_dir"])
        d["fetch"].pop("api_key", None)  # never echo credentials
        return d


def load_run_config(path=None, seed: int | None = None) -> RunConfig:
    doc = {}
    if path is not None:
        with open(path) as f:
            doc = json.load(f)
    cfg = RunConfig(
        sampler=SamplerConfig(**doc.get("sampler", {})),
        fetch=FetchConfig(**doc.get("fetch", {})),
        tsne=TsneConfig(**doc.get("tsne", {})),
        seed=int(doc.get("seed", 0)),
    )
    if seed is not None:
        cfg = dataclasses.replace(
            cfg,
            seed=seed,
            sampler=dataclasses.replace(cfg.sampler, seed=seed),
            tsne=dataclasses.replace(cfg.tsne, seed=seed),
        )
    return cfg


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def write_run_manifest(out_dir: Path, subcommand: str, cfg: RunConfig, inputs: list[str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = out_dir / "config_echo.json"
    echo.write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    manifest = {
        "subcommand": subcommand,
        "inputs": sorted(str(p) for p in inputs),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "versions": {
            "urbanenv": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _load_dataset(args):
    cmap = load_consolidation_map(args.class_map) if args.class_map else load_consolidation_map()
    return load_city(args.atlas, args.city, cmap)


# --- subcommand bodies ---------------------------------------------------------


def cmd_ingest(args, cfg: RunConfig, out: Path) -> list[str]:
    ds = _load_dataset(args)
    write_rejects_report(ds, out / "rejects.csv")
    counts: dict[str, int] = {name: 0 for name in CLASS_NAMES}
    for poly in ds.polygons:
        counts[CLASS_NAMES[poly.class_id]] += 1
    summary = {"city": ds.city, "n_polygons": len(ds.polygons),
               "n_rejects": len(ds.rejects), "polygons_per_class": counts}
    (out / "ingest_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return [args.atlas]


def cmd_stats(args, cfg: RunConfig, out: Path) -> list[str]:
    ds = _load_dataset(args)
    dist = class_area_distribution(ds)
    with open(out / "stats.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class_id", "class_name", "n_polygons", "area_m2", "fraction"])
        for cid in range(len(CLASS_NAMES)):
            w.writerow([cid, CLASS_NAMES[cid], dist["count"].get(cid, 0),
                        f"{dist['area_m2'].get(cid, 0.0):.9g}",
                        f"{dist['fraction'].get(cid, 0.0):.9g}"])
    return [args.atlas]


def cmd_sample(args, cfg: RunConfig, out: Path) -> list[str]:
    ds = _load_dataset(args)
    records, report = sample_city(ds, cfg.sampler)
    write_manifest(records, out / "manifest.csv")
    (out / "footprints.geojson").write_text(
        json.dumps(footprints_geojson(records), sort_keys=True) + "\n")
    (out / "sample_report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return [args.atlas]


def cmd_grid(args, cfg: RunConfig, out: Path) -> list[str]:
    ds = _load_dataset(args)
    grid = build_truth_grid(ds, cfg.sampler)
    write_grid(grid, out / "grid.csv")
    return [args.atlas]


def cmd_fetch(args, cfg: RunConfig, out: Path) -> list[str]:
    records = read_manifest(args.manifest)
    fetch_cfg = dataclasses.replace(cfg.fetch, cache_dir=args.cache or cfg.fetch.cache_dir)
    if args.offline:
        materialize_synthetic(records, fetch_cfg, seed=cfg.seed)
        n_network = 0
    else:
        fetcher = TileFetcher(fetch_cfg)
        images = fetcher.fetch_batch([r.tile for r in records])
        n_network = sum(1 for img in images if img.source == "network")
    (out / "fetch_report.json").write_text(json.dumps(
        {"n_tiles": len(records), "n_network": n_network, "offline": bool(args.offline)},
        sort_keys=True, indent=2) + "\n")
    return [args.manifest]


def cmd_extract(args, cfg: RunConfig, out: Path) -> list[str]:
    records = read_manifest(args.manifest)
    fetch_cfg = dataclasses.replace(cfg.fetch, cache_dir=args.cache or cfg.fetch.cache_dir)
    images, missing = [], []
    for r in records:
        try:
            images.append(load_cached_tile(r.tile, fetch_cfg))
        except FileNotFoundError as e:
            missing.append(str(e))
    if missing:
        raise FileNotFoundError(
            f"{len(missing)} tiles missing from cache; first: {missing[0]}")
    fm = extract_baseline(records, images)
    write_uef(fm, out / "features.uef.csv")
    return [args.manifest]


def cmd_embed(args, cfg: RunConfig, out: Path) -> list[str]:
    fm = read_uef(args.uef)
    emb = run_tsne(fm, cfg.tsne)
    write_embedding(emb, out / "embedding.csv")
    write_kl_trace(emb, out / "kl_trace.csv")
    return [args.uef]


def cmd_knn(args, cfg: RunConfig, out: Path) -> list[str]:
    if args.space == "codes":
        source = read_uef(args.uef)
    else:
        source = read_embedding(args.embedding)
    idx = build_index(source)
    k = min(args.k, idx.n)
    points = source.values if args.space == "codes" else source.coords
    results = {source.ids[i]: knn_query(idx, points[i], k) for i in range(idx.n)}
    write_query_results(out / "neighbors.csv", results)
    if args.space == "embedding":
        write_gallery_manifest(out / "galleries.csv", centroid_galleries(source, idx, k))
    return [args.uef if args.space == "codes" else args.embedding]


def cmd_confusion(args, cfg: RunConfig, out: Path) -> list[str]:
    _, trues, probs = read_predictions(args.predictions)
    cm = confusion_matrix(trues, probs.argmax(axis=1))
    write_confusion(cm, out / "confusion.csv")
    return [args.predictions]


def cmd_transfer(args, cfg: RunConfig, out: Path) -> list[str]:
    cells = {}
    inputs = [args.cells]
    with open(args.cells, newline="") as f:
        for row in csv.DictReader(f):
            _, trues, probs = read_predictions(row["predictions_path"])
            cells[(row["train_set"], row["test_city"])] = (trues, probs)
            inputs.append(row["predictions_path"])
    tm = transfer_matrix(cells, balanced=not args.unbalanced, seed=cfg.seed)
    write_transfer(tm, out / "transfer.csv")
    return inputs


def cmd_similarity(args, cfg: RunConfig, out: Path) -> list[str]:
    emb = read_embedding(args.embedding)
    rep = intercity_similarity(emb, args.reference, mode=args.mode)
    write_similarity(rep, out / "similarity.csv")
    return [args.embedding]


def cmd_raster(args, cfg: RunConfig, out: Path) -> list[str]:
    grid = read_grid(args.grid)
    palette = load_palette(args.palette) if args.palette else load_palette()
    write_ppm(render_class_map(grid, palette, scale=args.scale), out / "class_map.ppm")
    write_legend(palette, CLASS_NAMES, out / "legend.txt")
    if grid.probs is not None:
        for cid, img in enumerate(render_probability_maps(grid, scale=args.scale)):
            write_ppm(img, out / f"prob_class{cid}.ppm")
    return [args.grid]


def cmd_augment(args, cfg: RunConfig, out: Path) -> list[str]:
    records = read_manifest(args.manifest)
    fetch_cfg = dataclasses.replace(cfg.fetch, cache_dir=args.cache or cfg.fetch.cache_dir)
    pairs = ((r.sample_id, load_cached_tile(r.tile, fetch_cfg)) for r in records)
    export_augmented(pairs, out / "augmented", seed=cfg.seed, n_variants=args.variants)
    return [args.manifest]


# --- parser / dispatch -----------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument("--seed", type=int, help="override every configured seed")
    p.add_argument("--out", default="out", help="output directory (default: out)")


def _add_atlas(p: argparse.ArgumentParser) -> None:
    p.add_argument("--atlas", required=True, help="GeoJSON FeatureCollection path")
    p.add_argument("--city", required=True, help="city name recorded in outputs")
    p.add_argument("--class-map", dest="class_map", help="override class consolidation table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urbanenv",
                                     description="land-use sampling and analysis pipeline")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    handlers = {}

    def register(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        handlers[name] = fn
        return p

    _add_atlas(register("ingest", cmd_ingest, "validate a survey file, report rejects"))
    _add_atlas(register("stats", cmd_stats, "per-class polygon/area distribution"))
    _add_atlas(register("sample", cmd_sample, "draw tile samples, write the manifest"))
    _add_atlas(register("grid", cmd_grid, "build the labeled truth grid"))

    p = register("fetch", cmd_fetch, "download (or synthesize) manifest tiles into the cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", help="cache directory override")
    p.add_argument("--offline", action="store_true", help="synthetic tiles, no network")

    p = register("extract", cmd_extract, "baseline features for cached manifest tiles")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", help="cache directory override")

    p = register("embed", cmd_embed, "2-d embedding of a feature file")
    p.add_argument("--uef", required=True)

    p = register("knn", cmd_knn, "nearest-neighbor queries over codes or embedding")
    p.add_argument("--space", choices=["codes", "embedding"], required=True)
    p.add_argument("--uef", help="feature file (codes space)")
    p.add_argument("--embedding", help="embedding file (embedding space)")
    p.add_argument("--k", type=int, default=10)

    p = register("confusion", cmd_confusion, "confusion matrix from a predictions file")
    p.add_argument("--predictions", required=True)

    p = register("transfer", cmd_transfer, "train-by-test accuracy matrix")
    p.add_argument("--cells", required=True,
                   help="CSV: train_set,test_city,predictions_path")
    p.add_argument("--unbalanced", action="store_true", help="plain accuracy, no resampling")

    p = register("similarity", cmd_similarity, "per-class inter-city distance report")
    p.add_argument("--embedding", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--mode", choices=["centroid", "scatter"], default="centroid")

    p = register("raster", cmd_raster, "render class/probability maps from a grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--palette", help="palette file override")
    p.add_argument("--scale", type=int, default=1)

    p = register("augment", cmd_augment, "export augmented variants of cached tiles")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", help="cache directory override")
    p.add_argument("--variants", type=int, default=1)

    parser.set_defaults(_handlers=handlers)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand == "knn":
        if args.space == "codes" and not args.uef:
            parser.error("--space codes requires --uef")
        if args.space == "embedding" and not args.embedding:
            parser.error("--space embedding requires --embedding")
    try:
        cfg = load_run_config(args.config, seed=args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        handler = args._handlers[args.subcommand]
        inputs = handler(args, cfg, out)
        write_run_manifest(out, args.subcommand, cfg, inputs)
    except _DOMAIN_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
