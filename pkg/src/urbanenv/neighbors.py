"""Exact k-nearest-neighbor index over codes or 2-d embeddings.

Two interchangeable kinds with identical answers: a KD-tree (median split on
the widest-spread dimension, leaves of at most 16 points) and a linear scan.
The automatic policy picks the tree for d <= 64 and the scan above that,
where tree pruning stops paying for itself. Ties in distance are broken by
id so ranked galleries are reproducible.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field

import numpy as np

LEAF_SIZE = 16
KDTREE_MAX_DIM = 64


class NeighborError(ValueError):
    pass


@dataclass
class _Node:
    indices: np.ndarray | None = None  # leaf payload
    dim: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None


@dataclass
class NeighborIndex:
    points: np.ndarray  # (n, d)
    ids: list[str]
    kind: str  # "kdtree" or "linear"
    _root: _Node | None = field(default=None, repr=False)
    _id_rank: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def _build_node(points: np.ndarray, indices: np.ndarray) -> _Node:
    if len(indices) <= LEAF_SIZE:
        return _Node(indices=indices)
    sub = points[indices]
    spreads = sub.max(axis=0) - sub.min(axis=0)
    dim = int(np.argmax(spreads))
    order = np.argsort(sub[:, dim], kind="stable")
    mid = len(indices) // 2
    threshold = float(sub[order[mid], dim])
    left, right = indices[order[:mid]], indices[order[mid:]]
    return _Node(dim=dim, threshold=threshold,
                 left=_build_node(points, left), right=_build_node(points, right))


def build_index(fm, kind: str = "auto") -> NeighborIndex:
    """Index a FeatureMatrix, Embedding2D, or raw (points, ids) pair."""
    from .embedding import Embedding2D
    from .features import FeatureMatrix

    if isinstance(fm, FeatureMatrix):
        points, ids = fm.values, fm.ids
    elif isinstance(fm, Embedding2D):
        points, ids = fm.coords, fm.ids
    else:
        points, ids = fm
    points = np.asarray(points, dtype=np.float64)
    ids = list(ids)
    if points.ndim != 2 or points.shape[0] < 1:
        raise NeighborError("need a non-empty 2-d point matrix")
    if len(ids) != points.shape[0]:
        raise NeighborError("ids length mismatch")
    if not np.isfinite(points).all():
        raise NeighborError("non-finite values in index points")

    if kind == "auto":
        kind = "kdtree" if points.shape[1] <= KDTREE_MAX_DIM else "linear"
    if kind not in ("kdtree", "linear"):
        raise NeighborError(f"unknown index kind {kind!r}")

    # rank of each row in id order: distance ties resolve to the smaller id
    id_rank = np.empty(len(ids), dtype=np.int64)
    id_rank[sorted(range(len(ids)), key=lambda i: ids[i])] = np.arange(len(ids))

    root = _build_node(points, np.arange(points.shape[0])) if kind == "kdtree" else None
    return NeighborIndex(points=points, ids=ids, kind=kind, _root=root, _id_rank=id_rank)


def _select_k(idx: NeighborIndex, candidates: np.ndarray, q: np.ndarray, k: int):
    d2 = ((idx.points[candidates] - q) ** 2).sum(axis=1)
    order = np.lexsort((idx._id_rank[candidates], d2))[:k]
    return candidates[order], d2[order]


def knn_query(idx: NeighborIndex, q, k: int) -> list[tuple[str, float]]:
    """Exact Euclidean k-NN, ascending distance, ties broken by id."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (idx.d,):
        raise NeighborError(f"query dimension {q.shape} != ({idx.d},)")
    if not np.isfinite(q).all():
        raise NeighborError("non-finite query")
    if not (1 <= k <= idx.n):
        raise NeighborError(f"k={k} outside [1, {idx.n}]")

    if idx.kind == "linear":
        rows, d2 = _select_k(idx, np.arange(idx.n), q, k)
        return [(idx.ids[i], float(np.sqrt(v))) for i, v in zip(rows, d2)]

    # best-first KD-tree descent; heap of (d2, id_rank, row)
    best: list[tuple[float, int, int]] = []  # max-heap via negation

    def visit(node: _Node):
        if node.indices is not None:
            d2 = ((idx.points[node.indices] - q) ** 2).sum(axis=1)
            for row, v in zip(node.indices, d2):
                entry = (-v, -idx._id_rank[row], row)
                if len(best) < k:
                    heapq.heappush(best, entry)
                elif entry > best[0]:
                    heapq.heapreplace(best, entry)
            return
        diff = q[node.dim] - node.threshold
        near, far = (node.left, node.right) if diff < 0 else (node.right, node.left)
        visit(near)
        # prune the far side only when the worst kept neighbor beats the wall
        if len(best) < k or diff * diff <= -best[0][0]:
            visit(far)

    visit(idx._root)
    out = sorted(((-nv, -nr, row) for nv, nr, row in best))
    return [(idx.ids[row], float(np.sqrt(d2))) for d2, _, row in out]


def knn_query_batch(idx: NeighborIndex, queries, k: int):
    return [knn_query(idx, q, k) for q in np.asarray(queries, dtype=np.float64)]


def class_centroids(emb) -> dict[tuple[str, int], np.ndarray]:
    """Mean 2-d coordinate per (city, class) group, insertion-ordered."""
    groups: dict[tuple[str, int], list[int]] = {}
    for i, (city, cid) in enumerate(zip(emb.cities, emb.class_ids)):
        groups.setdefault((city, cid), []).append(i)
    return {key: emb.coords[rows].mean(axis=0) for key, rows in groups.items()}


def centroid_galleries(emb, idx: NeighborIndex, k: int) -> dict[tuple[str, int], list[str]]:
    """The k stored samples nearest each (city, class) centroid."""
    return {key: [sid for sid, _ in knn_query(idx, c, k)]
            for key, c in class_centroids(emb).items()}


# --- file formats ------------------------------------------------------------


def write_query_results(path, results: dict[str, list[tuple[str, float]]]) -> None:
    """CSV rows: query_id, rank, neighbor_id, distance."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["query_id", "rank", "neighbor_id", "distance"])
        for qid, hits in results.items():
            for rank, (nid, dist) in enumerate(hits):
                w.writerow([qid, rank, nid, f"{dist:.9g}"])


def write_gallery_manifest(path, galleries: dict[tuple[str, int], list[str]]) -> None:
    """CSV rows: city, class_id, rank, sample_id."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["city", "class_id", "rank", "sample_id"])
        for (city, cid), sids in galleries.items():
            for rank, sid in enumerate(sids):
                w.writerow([city, cid, rank, sid])
