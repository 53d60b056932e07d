"""Cross-city evaluation: confusion matrices, train-by-test transfer
accuracy, and per-class inter-city similarity in the 2-d embedding.

All metrics are pure functions of their inputs plus a seed; the balanced
transfer protocol resamples each cell to a fixed-size class-rebalanced
subset so accuracies stay comparable across cities with skewed class mixes.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .atlas import N_CLASSES
from .sampler import balanced_batch_indices

BALANCED_CELL_SIZE = 2000


class AnalysisError(ValueError):
    pass


# --- confusion ----------------------------------------------------------------


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (10, 10) int, rows = truth, cols = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())

    def row_normalized(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True)
        out = np.zeros_like(self.counts, dtype=np.float64)
        np.divide(self.counts, sums, out=out, where=sums > 0)
        return out

    def recall(self, c: int) -> float:
        row = self.counts[c].sum()
        return float(self.counts[c, c] / row) if row else float("nan")

    def precision(self, c: int) -> float:
        col = self.counts[:, c].sum()
        return float(self.counts[c, c] / col) if col else float("nan")


def confusion_matrix(truth, pred) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.size == 0 or truth.shape != pred.shape:
        raise AnalysisError("truth and pred must be equal-length and non-empty")
    for name, arr in (("truth", truth), ("pred", pred)):
        if arr.min() < 0 or arr.max() >= N_CLASSES:
            raise AnalysisError(f"{name} label outside 0..{N_CLASSES - 1}")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return ConfusionMatrix(counts=counts)


# --- transfer ------------------------------------------------------------------


@dataclass
class TransferMatrix:
    train_sets: list[str]
    test_cities: list[str]
    values: dict[tuple[str, str], float]
    missing: list[tuple[str, str]] = field(default_factory=list)

    def as_array(self) -> np.ndarray:
        out = np.full((len(self.train_sets), len(self.test_cities)), np.nan)
        for (tr, te), v in self.values.items():
            out[self.train_sets.index(tr), self.test_cities.index(te)] = v
        return out


def cell_accuracy(true_classes, probs, balanced: bool = True,
                  n_samples: int = BALANCED_CELL_SIZE, seed: int = 0) -> float:
    """Accuracy of one (train_set, test_city) cell from a predictions table."""
    true_classes = np.asarray(true_classes, dtype=np.int64)
    pred = np.argmax(np.asarray(probs, dtype=np.float64), axis=1)
    correct = (pred == true_classes).astype(np.float64)
    if not balanced:
        return float(correct.mean())
    (idx,) = balanced_batch_indices(true_classes, n_samples, seed=seed)
    return float(correct[idx].mean())


def transfer_matrix(cells: dict[tuple[str, str], tuple], balanced: bool = True,
                    n_samples: int = BALANCED_CELL_SIZE, seed: int = 0) -> TransferMatrix:
    """cells maps (train_set, test_city) -> (true_classes, probs); absent
    combinations of the observed axes are reported as missing, not errors."""
    train_sets = sorted({tr for tr, _ in cells})
    test_cities = sorted({te for _, te in cells})
    values: dict[tuple[str, str], float] = {}
    missing: list[tuple[str, str]] = []
    for tr in train_sets:
        for te in test_cities:
            if (tr, te) not in cells:
                missing.append((tr, te))
                continue
            trues, probs = cells[(tr, te)]
            cell_seed = int.from_bytes(
                hashlib.blake2b(f"{seed}:{tr}:{te}".encode(), digest_size=4).digest(), "big"
            )
            values[(tr, te)] = cell_accuracy(
                trues, probs, balanced=balanced, n_samples=n_samples, seed=cell_seed
            )
    return TransferMatrix(train_sets=train_sets, test_cities=test_cities,
                          values=values, missing=missing)


# --- inter-city similarity ------------------------------------------------------


@dataclass
class SimilarityReport:
    reference_city: str
    # class_id -> {city -> normalized distance in [0, 1]}
    values: dict[int, dict[str, float]]
    skipped_classes: list[int] = field(default_factory=list)
    mode: str = "centroid"


def _group_coords(emb) -> dict[tuple[str, int], np.ndarray]:
    groups: dict[tuple[str, int], list[int]] = {}
    for i, (city, cid) in enumerate(zip(emb.cities, emb.class_ids)):
        groups.setdefault((city, cid), []).append(i)
    return {k: emb.coords[rows] for k, rows in groups.items()}


def intercity_similarity(emb, reference_city: str, mode: str = "centroid") -> SimilarityReport:
    """Per-class distance of every city to the reference, normalized so the
    farthest non-reference city sits at 1.

    mode "centroid": squared distance between class centroids.
    mode "scatter": mean squared distance over sample pairs, i.e. centroid
    separation plus both within-group scatters.
    """
    if mode not in ("centroid", "scatter"):
        raise AnalysisError(f"unknown similarity mode {mode!r}")
    groups = _group_coords(emb)
    cities = sorted({c for c, _ in groups})
    if reference_city not in cities:
        raise AnalysisError(f"reference city {reference_city!r} not in embedding")
    classes = sorted({k for _, k in groups})

    values: dict[int, dict[str, float]] = {}
    skipped: list[int] = []
    for cid in classes:
        if (reference_city, cid) not in groups:
            skipped.append(cid)
            continue
        ref = groups[(reference_city, cid)]
        ref_mu = ref.mean(axis=0)
        raw: dict[str, float] = {}
        for city in cities:
            if (city, cid) not in groups:
                continue
            pts = groups[(city, cid)]
            mu = pts.mean(axis=0)
            d = float(((mu - ref_mu) ** 2).sum())
            if mode == "scatter":
                d += float(pts.var(axis=0).sum() + ref.var(axis=0).sum())
            raw[city] = d
        if mode == "scatter":
            raw[reference_city] = 0.0
        peak = max((v for c, v in raw.items() if c != reference_city), default=0.0)
        values[cid] = {c: (v / peak if peak > 0 else 0.0) for c, v in raw.items()}
        values[cid][reference_city] = 0.0
    return SimilarityReport(reference_city=reference_city, values=values,
                            skipped_classes=skipped, mode=mode)


# --- file formats ---------------------------------------------------------------


def write_confusion(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["truth\\pred"] + [str(c) for c in range(N_CLASSES)])
        for r in range(N_CLASSES):
            w.writerow([r] + [int(v) for v in cm.counts[r]])


def read_confusion(path) -> ConfusionMatrix:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    counts = np.array([[int(v) for v in row[1:]] for row in rows[1:]], dtype=np.int64)
    return ConfusionMatrix(counts=counts)


def write_transfer(tm: TransferMatrix, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["train_set"] + tm.test_cities)
        for tr in tm.train_sets:
            row = [tr]
            for te in tm.test_cities:
                v = tm.values.get((tr, te))
                row.append("" if v is None else f"{v:.9g}")
            w.writerow(row)


def write_similarity(rep: SimilarityReport, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class_id", "city", "normalized_distance"])
        for cid, per_city in rep.values.items():
            for city, v in sorted(per_city.items()):
                w.writerow([cid, city, f"{v:.9g}"])
