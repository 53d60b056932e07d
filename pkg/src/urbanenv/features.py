"""Image codes: the on-disk UEF format and a deterministic baseline extractor.

UEF (urban environment features) is a plain CSV with header
id,city,class_id,lat,lng,split,f0..f{d-1}; values carry 9 significant
digits, enough for float32-origin codes to round-trip exactly. The baseline
extractor (4x4 block color histograms, 384 dims) lets the whole pipeline
run without any deep-learning dependency.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .atlas import N_CLASSES
from .imagery import TileImage

BASELINE_BLOCKS = 4
BASELINE_BINS = 8
BASELINE_DIM = BASELINE_BLOCKS * BASELINE_BLOCKS * 3 * BASELINE_BINS  # 384
BASELINE_SOURCE = "baseline-hist"


class FeatureValidationError(ValueError):
    pass


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (n, d)
    ids: list[str]
    cities: list[str]
    class_ids: list[int]
    lats: list[float]
    lngs: list[float]
    splits: list[str] = field(default_factory=list)
    source: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise FeatureValidationError("values must be a 2-d matrix")
        n = self.values.shape[0]
        if not self.splits:
            self.splits = ["train"] * n
        for name, col in (
            ("ids", self.ids), ("cities", self.cities), ("class_ids", self.class_ids),
            ("lats", self.lats), ("lngs", self.lngs), ("splits", self.splits),
        ):
            if len(col) != n:
                raise FeatureValidationError(f"{name} length {len(col)} != {n} rows")
        if len(set(self.ids)) != n:
            raise FeatureValidationError("duplicate ids")
        if not np.isfinite(self.values).all():
            bad = int(np.argwhere(~np.isfinite(self.values).all(axis=1))[0][0])
            raise FeatureValidationError(f"non-finite value in row {bad}")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def baseline_features(img: TileImage) -> np.ndarray:
    """4x4 blocks x 3 channels x 8-bin histograms, each normalized to sum 1."""
    arr = img.to_array()
    h, w = arr.shape[:2]
    feats = []
    for by in range(BASELINE_BLOCKS):
        y0 = by * h // BASELINE_BLOCKS
        y1 = (by + 1) * h // BASELINE_BLOCKS
        for bx in range(BASELINE_BLOCKS):
            x0 = bx * w // BASELINE_BLOCKS
            x1 = (bx + 1) * w // BASELINE_BLOCKS
            block = arr[y0:y1, x0:x1]
            for ch in range(3):
                hist, _ = np.histogram(block[:, :, ch], bins=BASELINE_BINS, range=(0, 256))
                feats.append(hist / hist.sum())
    return np.concatenate(feats)


def extract_baseline(records, images) -> FeatureMatrix:
    """Baseline codes for sample records paired with their tile images."""
    values = np.stack([baseline_features(img) for img in images])
    return FeatureMatrix(
        values=values,
        ids=[r.sample_id for r in records],
        cities=[r.city for r in records],
        class_ids=[r.class_id for r in records],
        lats=[r.tile.center.lat for r in records],
        lngs=[r.tile.center.lng for r in records],
        splits=[r.split for r in records],
        source=BASELINE_SOURCE,
    )


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def write_uef(fm: FeatureMatrix, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["# source", fm.source])
        w.writerow(
            ["id", "city", "class_id", "lat", "lng", "split"] + [f"f{i}" for i in range(fm.d)]
        )
        for i in range(fm.n):
            w.writerow(
                [fm.ids[i], fm.cities[i], fm.class_ids[i], _fmt(fm.lats[i]), _fmt(fm.lngs[i]), fm.splits[i]]
                + [_fmt(v) for v in fm.values[i]]
            )


def read_uef(path) -> FeatureMatrix:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        rows = list(reader)
    if not rows:
        raise FeatureValidationError(f"{path}: empty file")
    source = ""
    if rows[0] and rows[0][0] == "# source":
        source = rows[0][1] if len(rows[0]) > 1 else ""
        rows = rows[1:]
    header = rows[0]
    meta_cols = ["id", "city", "class_id", "lat", "lng", "split"]
    if header[: len(meta_cols)] != meta_cols:
        raise FeatureValidationError(f"{path}: unexpected header {header[:6]}")
    d = len(header) - len(meta_cols)
    if d < 1 or header[len(meta_cols)] != "f0" or header[-1] != f"f{d-1}":
        raise FeatureValidationError(f"{path}: malformed feature columns")

    ids, cities, class_ids, lats, lngs, splits = [], [], [], [], [], []
    values = np.empty((len(rows) - 1, d))
    seen = set()
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise FeatureValidationError(f"{path}: row {r}: {len(row)} columns, expected {len(header)}")
        if row[0] in seen:
            raise FeatureValidationError(f"{path}: row {r}: duplicate id {row[0]!r}")
        seen.add(row[0])
        ids.append(row[0])
        cities.append(row[1])
        class_ids.append(int(row[2]))
        lats.append(float(row[3]))
        lngs.append(float(row[4]))
        splits.append(row[5])
        vals = [float(v) for v in row[6:]]
        if any(math.isnan(v) or math.isinf(v) for v in vals):
            raise FeatureValidationError(f"{path}: row {r}: non-finite feature value")
        values[r - 1] = vals
    return FeatureMatrix(
        values=values, ids=ids, cities=cities, class_ids=class_ids,
        lats=lats, lngs=lngs, splits=splits, source=source,
    )


# --- predictions CSV ---------------------------------------------------------

PROB_SUM_TOL = 1e-6


def write_predictions(path, ids, true_classes, probs) -> None:
    """Predictions CSV: id, true_class, p0..p9; rows must sum to 1."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[1] != N_CLASSES:
        raise FeatureValidationError(f"expected {N_CLASSES} probability columns")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "true_class"] + [f"p{i}" for i in range(N_CLASSES)])
        for i, sid in enumerate(ids):
            row_sum = probs[i].sum()
            if abs(row_sum - 1.0) > PROB_SUM_TOL:
                raise FeatureValidationError(f"row {i}: probabilities sum to {row_sum}")
            w.writerow([sid, true_classes[i]] + [_fmt(v) for v in probs[i]])


def read_predictions(path):
    """Returns (ids, true_classes, probs); validates row sums."""
    ids, trues = [], []
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for r, row in enumerate(reader, start=1):
            p = np.array([float(row[f"p{i}"]) for i in range(N_CLASSES)])
            if abs(p.sum() - 1.0) > PROB_SUM_TOL:
                raise FeatureValidationError(f"{path}: row {r}: probabilities sum to {p.sum()}")
            ids.append(row["id"])
            trues.append(int(row["true_class"]))
            rows.append(p)
    return ids, trues, np.array(rows)
