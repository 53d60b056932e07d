"""Deterministic synthetic survey cities for offline runs and tests."""

from __future__ import annotations

import numpy as np

from .atlas import CLASS_NAMES, N_CLASSES, load_consolidation_map
from .geo import GeoPoint, LocalFrame

# One survey source code per analysis class, taken from the shipped map.
_SOURCE_FOR_CLASS: dict[int, str] = {}


def _source_names():
    if not _SOURCE_FOR_CLASS:
        cmap = load_consolidation_map()
        for source, target in cmap.mapping.items():
            if isinstance(target, int) and target not in _SOURCE_FOR_CLASS:
                _SOURCE_FOR_CLASS[target] = source
    return _SOURCE_FOR_CLASS


def _convex_ring_m(rng, cx, cy, radius_m):
    angles = np.sort(rng.uniform(0, 2 * np.pi, 8))
    radii = rng.uniform(0.55 * radius_m, radius_m, 8)
    pts = [
        (cx + float(r * np.cos(a)), cy + float(r * np.sin(a)))
        for r, a in zip(radii, angles)
    ]
    return pts + [pts[0]]


def make_city(
    center: GeoPoint = GeoPoint(45.0, 9.0),
    polygons_per_class: int = 6,
    span_m: float = 20_000.0,
    min_radius_m: float = 200.0,
    max_radius_m: float = 1_500.0,
    seed: int = 0,
) -> dict:
    """Build a GeoJSON FeatureCollection with polygons for all 10 classes.

    Polygons are random convex shapes scattered in a span_m x span_m box
    around the center; class labels use the survey source-code names so the
    result flows through the normal consolidation path.
    """
    rng = np.random.default_rng(seed)
    frame = LocalFrame(center)
    sources = _source_names()
    features = []
    for class_id in range(N_CLASSES):
        for k in range(polygons_per_class):
            cx, cy = rng.uniform(-span_m / 2, span_m / 2, 2)
            radius = float(rng.uniform(min_radius_m, max_radius_m))
            ring_m = _convex_ring_m(rng, cx, cy, radius)
            ring_deg = []
            for x, y in ring_m:
                p = frame.unproject((x, y))
                ring_deg.append([p.lng, p.lat])
            features.append(
                {
                    "type": "Feature",
                    "properties": {
                        "id": f"c{class_id}-p{k}",
                        "ITEM": sources[class_id],
                    },
                    "geometry": {"type": "Polygon", "coordinates": [ring_deg]},
                }
            )
    return {"type": "FeatureCollection", "features": features}


def class_name(class_id: int) -> str:
    return CLASS_NAMES[class_id]
