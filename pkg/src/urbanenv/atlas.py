"""Load polygon land-use surveys (GeoJSON) and consolidate survey classes.

The 20 survey classes are mapped onto 10 analysis classes through a
user-editable table shipped as a data file. Shapefile input is out of
scope: convert to GeoJSON first (e.g. with ogr2ogr).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources

from .geo import GeoPoint, LocalFrame, PolygonGeom, PolygonValidityError, polygon_area_m2

CLASS_NAMES = (
    "Agricultural + Semi-natural areas + Wetlands",
    "Airports",
    "Forests",
    "Green urban areas",
    "High Density Urban Fabric",
    "Industrial, commercial, public, military and private units",
    "Low Density Urban Fabric",
    "Medium Density Urban Fabric",
    "Sports and leisure facilities",
    "Water bodies",
)

N_CLASSES = len(CLASS_NAMES)
_NAME_TO_ID = {name: i for i, name in enumerate(CLASS_NAMES)}

EXCLUDED = "excluded"


class AtlasParseError(ValueError):
    """Malformed survey file."""


class UnknownClassCodeError(KeyError):
    """Source class code not declared in the consolidation map."""


class EmptyDatasetError(ValueError):
    """Operation requires at least one polygon."""


@dataclass(frozen=True)
class LandUseClass:
    class_id: int
    name: str
    color: tuple[int, int, int]


@dataclass(frozen=True)
class ClassConsolidationMap:
    """Total mapping from source class code to class_id or EXCLUDED."""

    mapping: dict[str, int | str]

    def consolidate(self, code: str):
        """Return a class_id, or EXCLUDED. Undeclared codes raise."""
        try:
            return self.mapping[code]
        except KeyError:
            raise UnknownClassCodeError(code) from None


@dataclass(frozen=True)
class LandUsePolygon:
    polygon_id: str
    city: str
    class_id: int
    geometry: PolygonGeom  # degrees
    area_m2: float


@dataclass(frozen=True)
class CityDataset:
    city: str
    center: GeoPoint
    polygons: tuple[LandUsePolygon, ...]
    rejects: tuple[tuple[str, str], ...] = field(default_factory=tuple)  # (polygon_id, reason)

    def __post_init__(self):
        if not self.polygons:
            raise EmptyDatasetError(f"no polygons loaded for {self.city}")


def load_consolidation_map(path=None) -> ClassConsolidationMap:
    """Parse the tab-separated class map; defaults to the shipped table."""
    if path is None:
        text = resources.files("urbanenv.data").joinpath("class_map.txt").read_text()
    else:
        with open(path) as f:
            text = f.read()
    mapping: dict[str, int | str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise AtlasParseError(f"class map line {lineno}: expected 2 tab-separated fields")
        source, target = parts
        if target == EXCLUDED:
            mapping[source] = EXCLUDED
        elif target in _NAME_TO_ID:
            mapping[source] = _NAME_TO_ID[target]
        else:
            raise AtlasParseError(f"class map line {lineno}: unknown target class {target!r}")
    return ClassConsolidationMap(mapping)


def load_palette(path=None) -> dict[int, tuple[int, int, int]]:
    """Parse the class color table; defaults to the shipped palette."""
    if path is None:
        text = resources.files("urbanenv.data").joinpath("palette.txt").read_text()
    else:
        with open(path) as f:
            text = f.read()
    palette = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            cid, rgb = line.split("\t")
            r, g, b = (int(v) for v in rgb.split(","))
        except ValueError as e:
            raise AtlasParseError(f"palette line {lineno}: {e}") from None
        palette[int(cid)] = (r, g, b)
    return palette


def default_classes() -> list[LandUseClass]:
    palette = load_palette()
    return [LandUseClass(i, name, palette[i]) for i, name in enumerate(CLASS_NAMES)]


def consolidate_classes(code: str, cmap: ClassConsolidationMap):
    return cmap.consolidate(code)


def _rings_from_coords(coords) -> PolygonGeom:
    rings = [[(float(x), float(y)) for x, y in ring] for ring in coords]
    return PolygonGeom(exterior=rings[0], holes=tuple(rings[1:]), unit="deg")


def _feature_polygons(geometry):
    """Yield PolygonGeom objects from a GeoJSON Polygon/MultiPolygon geometry."""
    gtype = geometry.get("type")
    if gtype == "Polygon":
        yield _rings_from_coords(geometry["coordinates"])
    elif gtype == "MultiPolygon":
        for coords in geometry["coordinates"]:
            yield _rings_from_coords(coords)
    else:
        raise AtlasParseError(f"unsupported geometry type {gtype!r}")


def _dataset_center(polygons: list[LandUsePolygon]) -> GeoPoint:
    """Mean of polygon bounding-box centers, a stable city-center proxy."""
    lats, lngs = [], []
    for p in polygons:
        xs = [v[0] for v in p.geometry.exterior]
        ys = [v[1] for v in p.geometry.exterior]
        lngs.append((min(xs) + max(xs)) / 2.0)
        lats.append((min(ys) + max(ys)) / 2.0)
    return GeoPoint(lat=sum(lats) / len(lats), lng=sum(lngs) / len(lngs))


def load_city(
    path,
    city: str,
    consolidation: ClassConsolidationMap,
    class_property: str = "ITEM",
    center: GeoPoint | None = None,
) -> CityDataset:
    """Load a GeoJSON FeatureCollection into a CityDataset.

    Features whose class code maps to EXCLUDED are dropped silently;
    unknown codes and invalid rings go to the rejects report.
    """
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise AtlasParseError(f"{path}: line {e.lineno}, col {e.colno}: {e.msg}") from None
    if doc.get("type") != "FeatureCollection":
        raise AtlasParseError(f"{path}: expected a FeatureCollection")

    polygons: list[LandUsePolygon] = []
    rejects: list[tuple[str, str]] = []
    for i, feature in enumerate(doc.get("features", [])):
        props = feature.get("properties") or {}
        fid = str(props.get("id", feature.get("id", f"feature-{i}")))
        code = props.get(class_property)
        if code is None:
            rejects.append((fid, f"missing property {class_property!r}"))
            continue
        try:
            target = consolidation.consolidate(str(code))
        except UnknownClassCodeError:
            rejects.append((fid, f"unknown class code {code!r}"))
            continue
        if target == EXCLUDED:
            continue
        try:
            geoms = list(_feature_polygons(feature.get("geometry") or {}))
        except (PolygonValidityError, AtlasParseError, KeyError, TypeError) as e:
            rejects.append((fid, f"invalid geometry: {e}"))
            continue
        for j, geom in enumerate(geoms):
            pid = fid if len(geoms) == 1 else f"{fid}-{j}"
            frame = LocalFrame(_ring_center(geom))
            area = polygon_area_m2(geom, frame)
            if area <= 0:
                rejects.append((pid, "zero-area polygon"))
                continue
            polygons.append(
                LandUsePolygon(
                    polygon_id=pid,
                    city=city,
                    class_id=int(target),
                    geometry=geom,
                    area_m2=area,
                )
            )

    if not polygons:
        raise EmptyDatasetError(f"{path}: no usable polygons for {city}")
    if center is None:
        center = _dataset_center(polygons)
    return CityDataset(city=city, center=center, polygons=tuple(polygons), rejects=tuple(rejects))


def _ring_center(geom: PolygonGeom) -> GeoPoint:
    xs = [v[0] for v in geom.exterior]
    ys = [v[1] for v in geom.exterior]
    return GeoPoint(lat=(min(ys) + max(ys)) / 2.0, lng=(min(xs) + max(xs)) / 2.0)


def class_area_distribution(ds: CityDataset):
    """Per-class total area (m^2), polygon count, and area fraction."""
    totals = {i: 0.0 for i in range(N_CLASSES)}
    counts = {i: 0 for i in range(N_CLASSES)}
    for p in ds.polygons:
        totals[p.class_id] += p.area_m2
        counts[p.class_id] += 1
    grand = sum(totals.values())
    fractions = {i: totals[i] / grand for i in range(N_CLASSES)}
    return {"area_m2": totals, "count": counts, "fraction": fractions}


def write_rejects_report(ds: CityDataset, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["polygon_id", "reason"])
        writer.writerows(ds.rejects)
