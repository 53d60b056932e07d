"""Polygon filtering, stratified picking, tile sampling, truth grids, splits.

All randomness flows from a single 64-bit seed through PCG64 generators;
per-polygon streams are derived by hashing (seed, purpose, polygon_id), so
per-polygon work parallelizes without changing results.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .atlas import N_CLASSES, CityDataset, LandUsePolygon
from .geo import (
    GeoPoint,
    LocalFrame,
    TileSpec,
    ground_resolution,
    point_in_polygon,
    rect_polygon_intersection_area,
)

UNLABELED = -1

SPLIT_TRAIN = "train"
SPLIT_VALIDATION = "validation"
SPLIT_TEST_GRID = "test-grid"


def _default_decile_weights() -> tuple[float, ...]:
    # Linear ramp: decile d gets weight d / 55.
    return tuple(d / 55.0 for d in range(1, 11))


@dataclass(frozen=True)
class SamplerConfig:
    min_polygon_area_m2: float = 60_000.0  # the survey threshold constant 0.06 km^2
    tile_px: int = 224
    zoom: int = 17
    nominal_res_m_per_px: float = 1.2
    coverage_fraction: float = 0.25
    coverage_mode: str = "min"  # "min": denom = min(area, tile area); "literal": polygon area
    decile_weights: tuple[float, ...] = field(default_factory=_default_decile_weights)
    images_per_area_coeff: float = 1.0
    max_images_per_polygon: int = 20
    max_rejection_attempts: int = 100
    polygons_per_class: int = 200
    grid_rows: int = 100
    grid_cols: int = 100
    cell_size_m: float = 250.0
    seed: int = 0

    def __post_init__(self):
        if self.min_polygon_area_m2 <= 0 or self.tile_px <= 0 or self.cell_size_m <= 0:
            raise ValueError("bounds must be positive")
        if self.coverage_mode not in ("min", "literal"):
            raise ValueError(f"unknown coverage_mode {self.coverage_mode!r}")
        if abs(sum(self.decile_weights) - 1.0) > 1e-12 or len(self.decile_weights) != 10:
            raise ValueError("decile_weights must be 10 values summing to 1")
        if any(w < 0 for w in self.decile_weights):
            raise ValueError("decile_weights must be nonnegative")

    @property
    def tile_area_m2(self) -> float:
        return (self.tile_px * self.nominal_res_m_per_px) ** 2

    def with_tile_side_m(self, side_m: float) -> "SamplerConfig":
        """Scale-sensitivity preset: same pixel count, different ground side."""
        return replace(self, nominal_res_m_per_px=side_m / self.tile_px)


# Threshold the survey formula would give: (1/4) * (224 * 1.2 m)^2.
FORMULA_MIN_AREA_M2 = 0.25 * (224 * 1.2) ** 2


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    tile: TileSpec
    class_id: int
    polygon_id: str
    city: str
    split: str = SPLIT_TRAIN
    coverage_achieved: float = 0.0


@dataclass
class LabeledGrid:
    city: str
    origin: GeoPoint  # grid center
    n_rows: int
    n_cols: int
    cell_size_m: float
    labels: np.ndarray  # (n_rows, n_cols) int, UNLABELED where no polygon intersects
    probs: np.ndarray | None = None  # (n_rows, n_cols, N_CLASSES)

    def cell_rect(self, row: int, col: int):
        """Local-frame rect of a cell; row 0 is the northernmost row."""
        half_w = self.n_cols * self.cell_size_m / 2.0
        half_h = self.n_rows * self.cell_size_m / 2.0
        xmin = -half_w + col * self.cell_size_m
        ymax = half_h - row * self.cell_size_m
        return ((xmin, ymax - self.cell_size_m), (xmin + self.cell_size_m, ymax))


def derive_rng(seed: int, *tokens) -> np.random.Generator:
    """Deterministic per-unit PCG64 stream from the run seed and unit tokens."""
    material = ":".join([str(seed)] + [str(t) for t in tokens]).encode()
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest, "big")))


def area_filter(ds: CityDataset, cfg: SamplerConfig) -> dict[int, list[LandUsePolygon]]:
    """Polygons above the minimum-area threshold, grouped by class."""
    by_class: dict[int, list[LandUsePolygon]] = {i: [] for i in range(N_CLASSES)}
    for p in ds.polygons:
        if p.area_m2 >= cfg.min_polygon_area_m2:
            by_class[p.class_id].append(p)
    return by_class


def pick_polygons(ds: CityDataset, cfg: SamplerConfig):
    """Decile-stratified polygon selection per class.

    Returns (selection, empty_classes): selection maps class_id to the
    chosen polygons; classes with nothing above the area filter are flagged
    rather than fatal.
    """
    by_class = area_filter(ds, cfg)

    selection: dict[int, list[LandUsePolygon]] = {}
    empty_classes: list[int] = []
    for class_id in range(N_CLASSES):
        eligible = sorted(by_class[class_id], key=lambda p: (p.area_m2, p.polygon_id))
        if not eligible:
            empty_classes.append(class_id)
            continue
        rng = derive_rng(cfg.seed, "pick", class_id)
        deciles = np.array_split(np.arange(len(eligible)), 10)
        chosen: list[LandUsePolygon] = []
        for d, idx in enumerate(deciles):
            want = round(cfg.decile_weights[d] * cfg.polygons_per_class)
            take = min(want, len(idx))
            if take > 0:
                picked = rng.choice(idx, size=take, replace=False)
                chosen.extend(eligible[i] for i in sorted(picked))
        if chosen:
            selection[class_id] = chosen
        else:
            empty_classes.append(class_id)
    return selection, empty_classes


def coverage_denominator(poly_area_m2: float, cfg: SamplerConfig) -> float:
    if cfg.coverage_mode == "literal":
        return poly_area_m2
    return min(poly_area_m2, cfg.tile_area_m2)


def sample_tiles(poly: LandUsePolygon, cfg: SamplerConfig):
    """Sample tile centers inside the polygon under the coverage rule.

    Returns (records, n_skipped): n_skipped counts requested tiles that
    exhausted max_rejection_attempts without an acceptable placement.
    """
    xs = [v[0] for v in poly.geometry.exterior]
    ys = [v[1] for v in poly.geometry.exterior]
    frame = LocalFrame(GeoPoint(lat=(min(ys) + max(ys)) / 2.0, lng=(min(xs) + max(xs)) / 2.0))
    poly_m = poly.geometry.to_local(frame)
    xmin, ymin, xmax, ymax = poly_m.bounds()

    n_img = min(
        cfg.max_images_per_polygon,
        max(1, round(cfg.images_per_area_coeff * poly.area_m2 / cfg.tile_area_m2)),
    )
    denom = coverage_denominator(poly.area_m2, cfg)
    threshold = cfg.coverage_fraction * denom

    rng = derive_rng(cfg.seed, "tiles", poly.polygon_id)
    records: list[SampleRecord] = []
    n_skipped = 0
    for i in range(n_img):
        accepted = False
        for _ in range(cfg.max_rejection_attempts):
            x = rng.uniform(xmin, xmax)
            y = rng.uniform(ymin, ymax)
            if not point_in_polygon((x, y), poly_m):
                continue
            center = frame.unproject((x, y))
            res = ground_resolution(center.lat, cfg.zoom)
            half_w = cfg.tile_px * res / 2.0
            rect = ((x - half_w, y - half_w), (x + half_w, y + half_w))
            inter = rect_polygon_intersection_area(rect, poly_m)
            if inter >= threshold:
                records.append(
                    SampleRecord(
                        sample_id=f"{poly.polygon_id}-t{i:03d}",
                        tile=TileSpec(center=center, zoom=cfg.zoom, width_px=cfg.tile_px, height_px=cfg.tile_px),
                        class_id=poly.class_id,
                        polygon_id=poly.polygon_id,
                        city=poly.city,
                        coverage_achieved=inter / denom,
                    )
                )
                accepted = True
                break
        if not accepted:
            n_skipped += 1
    return records, n_skipped


def sample_city(ds: CityDataset, cfg: SamplerConfig):
    """pick_polygons + sample_tiles over the whole city.

    Output is merged in canonical (polygon_id, tile index) order, so it does
    not depend on any parallel execution interleaving.
    """
    selection, empty_classes = pick_polygons(ds, cfg)
    polys = sorted((p for ps in selection.values() for p in ps), key=lambda p: p.polygon_id)
    records: list[SampleRecord] = []
    skipped = 0
    for poly in polys:
        recs, n_skip = sample_tiles(poly, cfg)
        records.extend(recs)
        skipped += n_skip
    return records, {"skipped_tiles": skipped, "empty_classes": empty_classes}


def build_truth_grid(ds: CityDataset, cfg: SamplerConfig) -> LabeledGrid:
    """Label each grid cell with the class of the max-intersection polygon.

    Exact-equal intersection areas break toward the smaller class_id; cells
    no polygon touches stay UNLABELED.
    """
    grid = LabeledGrid(
        city=ds.city,
        origin=ds.center,
        n_rows=cfg.grid_rows,
        n_cols=cfg.grid_cols,
        cell_size_m=cfg.cell_size_m,
        labels=np.full((cfg.grid_rows, cfg.grid_cols), UNLABELED, dtype=int),
    )
    frame = LocalFrame(ds.center)
    best_area = np.zeros((cfg.grid_rows, cfg.grid_cols))
    half_w = cfg.grid_cols * cfg.cell_size_m / 2.0
    half_h = cfg.grid_rows * cfg.cell_size_m / 2.0

    for poly in ds.polygons:
        poly_m = poly.geometry.to_local(frame)
        xmin, ymin, xmax, ymax = poly_m.bounds()
        # columns increase east, rows increase south
        c0 = max(0, int(np.floor((xmin + half_w) / cfg.cell_size_m)))
        c1 = min(cfg.grid_cols - 1, int(np.floor((xmax + half_w) / cfg.cell_size_m)))
        r0 = max(0, int(np.floor((half_h - ymax) / cfg.cell_size_m)))
        r1 = min(cfg.grid_rows - 1, int(np.floor((half_h - ymin) / cfg.cell_size_m)))
        if c1 < 0 or r1 < 0 or c0 > cfg.grid_cols - 1 or r0 > cfg.grid_rows - 1:
            continue
        for r in range(r0, r1 + 1):
            for c in range(c0, c1 + 1):
                area = rect_polygon_intersection_area(grid.cell_rect(r, c), poly_m)
                if area <= 0.0:
                    continue
                if area > best_area[r, c] or (
                    area == best_area[r, c] and poly.class_id < grid.labels[r, c]
                ):
                    best_area[r, c] = area
                    grid.labels[r, c] = poly.class_id
    return grid


def split_dataset(records, fraction: float, mode: str = "by_polygon", seed: int = 0):
    """Assign records to train/validation.

    by_image shuffles records; by_polygon keeps whole polygons on one side
    to prevent spatial leakage. Returns new SampleRecords in input order.
    """
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must be in (0, 1)")
    n = len(records)
    if n == 0:
        raise ValueError("no records to split")
    if mode == "by_image":
        rng = derive_rng(seed, "split-image")
        order = rng.permutation(n)
        n_train = int(round(fraction * n))
        train_ids = {records[i].sample_id for i in order[:n_train]}
    elif mode == "by_polygon":
        poly_ids = sorted({r.polygon_id for r in records})
        if len(poly_ids) < 2:
            raise ValueError("by_polygon split needs at least 2 polygons")
        rng = derive_rng(seed, "split-polygon")
        order = rng.permutation(len(poly_ids))
        counts = {pid: 0 for pid in poly_ids}
        for r in records:
            counts[r.polygon_id] += 1
        target = fraction * n
        train_polys: set[str] = set()
        total = 0
        for i in order:
            pid = poly_ids[i]
            if total >= target:
                break
            train_polys.add(pid)
            total += counts[pid]
        # both sides must be non-empty
        if len(train_polys) == len(poly_ids):
            train_polys.discard(poly_ids[order[-1]])
        if not train_polys:
            train_polys.add(poly_ids[order[0]])
        train_ids = {r.sample_id for r in records if r.polygon_id in train_polys}
    else:
        raise ValueError(f"unknown split mode {mode!r}")

    return [
        replace(r, split=SPLIT_TRAIN if r.sample_id in train_ids else SPLIT_VALIDATION)
        for r in records
    ]


def balanced_batch_indices(labels, batch_size: int, seed: int, n_batches: int = 1, exact: bool = False):
    """Index batches that rebalance class frequencies.

    Default draws with replacement, weight ∝ 1/count(class); exact mode
    allocates batch_size // n_classes slots per present class.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty label set")
    rng = derive_rng(seed, "batches")
    classes, counts = np.unique(labels, return_counts=True)
    batches = []
    if exact:
        per_class, rem = divmod(batch_size, len(classes))
        for _ in range(n_batches):
            idx = []
            for j, c in enumerate(classes):
                pool = np.flatnonzero(labels == c)
                take = per_class + (1 if j < rem else 0)
                idx.append(rng.choice(pool, size=take, replace=True))
            batches.append(np.concatenate(idx))
    else:
        weights = np.zeros(labels.size)
        for c, cnt in zip(classes, counts):
            weights[labels == c] = 1.0 / cnt
        weights /= weights.sum()
        for _ in range(n_batches):
            batches.append(rng.choice(labels.size, size=batch_size, replace=True, p=weights))
    return batches


# --- manifest and grid file formats -----------------------------------------

MANIFEST_FIELDS = [
    "sample_id", "city", "class_id", "polygon_id",
    "lat", "lng", "zoom", "px", "coverage", "split",
]


def write_manifest(records, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(MANIFEST_FIELDS)
        for r in records:
            w.writerow([
                r.sample_id, r.city, r.class_id, r.polygon_id,
                f"{r.tile.center.lat:.6f}", f"{r.tile.center.lng:.6f}",
                r.tile.zoom, r.tile.width_px, f"{r.coverage_achieved:.6f}", r.split,
            ])


def read_manifest(path) -> list[SampleRecord]:
    records = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            records.append(
                SampleRecord(
                    sample_id=row["sample_id"],
                    tile=TileSpec(
                        center=GeoPoint(float(row["lat"]), float(row["lng"])),
                        zoom=int(row["zoom"]),
                        width_px=int(row["px"]),
                        height_px=int(row["px"]),
                    ),
                    class_id=int(row["class_id"]),
                    polygon_id=row["polygon_id"],
                    city=row["city"],
                    split=row["split"],
                    coverage_achieved=float(row["coverage"]),
                )
            )
    return records


def footprints_geojson(records) -> dict:
    """Tile footprints as a GeoJSON FeatureCollection of polygons."""
    features = []
    for r in records:
        from .geo import tile_footprint

        _, (south, west, north, east) = tile_footprint(r.tile)
        ring = [[west, south], [east, south], [east, north], [west, north], [west, south]]
        features.append(
            {
                "type": "Feature",
                "properties": {
                    "sample_id": r.sample_id,
                    "class_id": r.class_id,
                    "polygon_id": r.polygon_id,
                    "city": r.city,
                    "split": r.split,
                },
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def write_grid(grid: LabeledGrid, path) -> None:
    """Grid as CSV (row, col, class_id [, p0..p9]) plus a .hdr sidecar."""
    path = str(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        header = ["row", "col", "class_id"]
        if grid.probs is not None:
            header += [f"p{i}" for i in range(N_CLASSES)]
        w.writerow(header)
        for r in range(grid.n_rows):
            for c in range(grid.n_cols):
                row = [r, c, int(grid.labels[r, c])]
                if grid.probs is not None:
                    row += [f"{v:.9g}" for v in grid.probs[r, c]]
                w.writerow(row)
    with open(path + ".hdr", "w") as f:
        f.write(f"city={grid.city}\n")
        f.write(f"origin_lat={grid.origin.lat:.6f}\n")
        f.write(f"origin_lng={grid.origin.lng:.6f}\n")
        f.write(f"n_rows={grid.n_rows}\n")
        f.write(f"n_cols={grid.n_cols}\n")
        f.write(f"cell_size_m={grid.cell_size_m}\n")


def read_grid(path) -> LabeledGrid:
    path = str(path)
    meta = {}
    with open(path + ".hdr") as f:
        for line in f:
            k, v = line.strip().split("=", 1)
            meta[k] = v
    n_rows, n_cols = int(meta["n_rows"]), int(meta["n_cols"])
    labels = np.full((n_rows, n_cols), UNLABELED, dtype=int)
    probs = None
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        has_probs = reader.fieldnames is not None and "p0" in reader.fieldnames
        if has_probs:
            probs = np.zeros((n_rows, n_cols, N_CLASSES))
        for row in reader:
            r, c = int(row["row"]), int(row["col"])
            labels[r, c] = int(row["class_id"])
            if has_probs:
                probs[r, c] = [float(row[f"p{i}"]) for i in range(N_CLASSES)]
    return LabeledGrid(
        city=meta["city"],
        origin=GeoPoint(float(meta["origin_lat"]), float(meta["origin_lng"])),
        n_rows=n_rows,
        n_cols=n_cols,
        cell_size_m=float(meta["cell_size_m"]),
        labels=labels,
        probs=probs,
    )
