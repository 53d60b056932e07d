"""t-SNE to 2-d: perplexity-calibrated affinities, exact and Barnes-Hut
gradients, momentum + gain-adaptive descent with early exaggeration.

The exact O(n^2) path doubles as the oracle for the quadtree-accelerated
path; theta = 0 selects it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureMatrix
from .sampler import derive_rng

P_FLOOR = 1e-12
EXAGGERATION = 12.0
EXAGGERATION_ITERS = 250
MOMENTUM_SWITCH_ITER = 250


class TsneError(RuntimeError):
    pass


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    n_iter: int = 1000
    learning_rate: float = 200.0
    theta: float = 0.5  # Barnes-Hut accuracy; 0 selects the exact gradient
    init_std: float = 1e-4
    unit_norm: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.perplexity <= 0:
            raise ValueError("perplexity must be positive")
        if not (0.0 <= self.theta < 1.0):
            raise ValueError("theta must be in [0, 1)")
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")


@dataclass
class Embedding2D:
    coords: np.ndarray  # (n, 2)
    ids: list[str]
    cities: list[str]
    class_ids: list[int]
    kl_trace: list[tuple[int, float]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.coords.shape[0]


def _pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    sq = (X ** 2).sum(axis=1)
    D2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(D2, 0.0)
    return np.maximum(D2, 0.0)


def _conditional_row(d2_row: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 50):
    """Binary search the Gaussian precision so the row entropy hits
    log2(perplexity) bits; returns the conditional distribution."""
    target = np.log2(perplexity)
    beta, beta_min, beta_max = 1.0, 0.0, np.inf
    p = np.zeros_like(d2_row)
    for _ in range(max_iter):
        w = np.exp(-beta * d2_row)
        s = w.sum()
        if s <= 0:
            entropy = 0.0
            p = w
        else:
            p = w / s
            nz = p > 0
            entropy = -(p[nz] * np.log2(p[nz])).sum()
        if abs(entropy - target) < tol:
            break
        if entropy > target:
            beta_min = beta
            beta = beta * 2.0 if np.isinf(beta_max) else (beta + beta_max) / 2.0
        else:
            beta_max = beta
            beta = beta / 2.0 if beta_min == 0.0 else (beta + beta_min) / 2.0
    return p


def perplexity_affinities(fm, perplexity: float, k_neighbors: int | None = None) -> np.ndarray:
    """Symmetrized joint affinities P (n x n, zero diagonal, sum 1).

    k_neighbors restricts each conditional to that many nearest neighbors
    (the sparse attractive input for Barnes-Hut).
    """
    X = fm.values if isinstance(fm, FeatureMatrix) else np.asarray(fm, dtype=np.float64)
    n = X.shape[0]
    if n < 4:
        raise TsneError("need at least 4 points")
    if perplexity >= n / 3.0:
        raise TsneError(f"perplexity {perplexity} infeasible for n={n} (needs < n/3)")

    D2 = _pairwise_sq_dists(X)
    cond = np.zeros((n, n))
    for i in range(n):
        others = np.delete(np.arange(n), i)
        if k_neighbors is not None and k_neighbors < n - 1:
            order = np.argsort(D2[i, others], kind="stable")[:k_neighbors]
            others = others[order]
        cond[i, others] = _conditional_row(D2[i, others], perplexity)

    P = (cond + cond.T) / (2.0 * n)
    off_diag = ~np.eye(n, dtype=bool)
    P[off_diag] = np.maximum(P[off_diag], P_FLOOR)
    P /= P.sum()
    P[off_diag] = np.maximum(P[off_diag], P_FLOOR)
    np.fill_diagonal(P, 0.0)
    return P


def _student_t_weights(Y: np.ndarray) -> np.ndarray:
    W = 1.0 / (1.0 + _pairwise_sq_dists(Y))
    np.fill_diagonal(W, 0.0)
    return W


def kl_divergence(P: np.ndarray, Y: np.ndarray) -> float:
    W = _student_t_weights(Y)
    Q = W / W.sum()
    mask = P > 0
    return float((P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-300))).sum())


def tsne_gradient_exact(P: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Exact KL gradient: 4 Σ_j (p_ij − q_ij) w_ij (y_i − y_j)."""
    W = _student_t_weights(Y)
    Q = W / W.sum()
    M = (P - Q) * W
    return 4.0 * (M.sum(axis=1)[:, None] * Y - M @ Y)


# --- quadtree for the Barnes-Hut repulsive term ------------------------------


class _QuadTree:
    """Flat-array quadtree over 2-d points with per-cell centers of mass."""

    __slots__ = ("com", "count", "size", "children", "point", "n_nodes")

    def __init__(self, Y: np.ndarray):
        n = Y.shape[0]
        cap = max(8, 8 * n)
        self.com = np.zeros((cap, 2))
        self.count = np.zeros(cap, dtype=np.int64)
        self.size = np.zeros(cap)
        self.children = np.full((cap, 4), -1, dtype=np.int64)
        self.point = np.full(cap, -1, dtype=np.int64)  # point index for 1-point leaves
        self.n_nodes = 0

        lo = Y.min(axis=0)
        hi = Y.max(axis=0)
        center = (lo + hi) / 2.0
        width = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-12))
        self._build(Y, np.arange(n), center, width)

    def _alloc(self) -> int:
        if self.n_nodes == self.com.shape[0]:
            grow = self.com.shape[0]
            self.com = np.vstack([self.com, np.zeros((grow, 2))])
            self.count = np.concatenate([self.count, np.zeros(grow, dtype=np.int64)])
            self.size = np.concatenate([self.size, np.zeros(grow)])
            self.children = np.vstack([self.children, np.full((grow, 4), -1, dtype=np.int64)])
            self.point = np.concatenate([self.point, np.full(grow, -1, dtype=np.int64)])
        idx = self.n_nodes
        self.n_nodes += 1
        return idx

    def _build(self, Y, idx, center, width) -> int:
        node = self._alloc()
        pts = Y[idx]
        self.com[node] = pts.mean(axis=0)
        self.count[node] = len(idx)
        self.size[node] = width
        if len(idx) == 1:
            self.point[node] = idx[0]
            return node
        # identical coincident points: stop splitting, keep as aggregate leaf
        if np.allclose(pts, pts[0], atol=0.0):
            self.point[node] = idx[0]
            return node
        east = pts[:, 0] > center[0]
        north = pts[:, 1] > center[1]
        shift = width / 4.0
        half = width / 2.0
        for q, (e_mask, n_mask, dx, dy) in enumerate(
            [
                (~east, ~north, -shift, -shift),
                (east, ~north, shift, -shift),
                (~east, north, -shift, shift),
                (east, north, shift, shift),
            ]
        ):
            sub = idx[e_mask & n_mask]
            if len(sub):
                child_center = (center[0] + dx, center[1] + dy)
                self.children[node, q] = self._build(Y, sub, np.array(child_center), half)
        return node


def _bh_repulsion(Y: np.ndarray, theta: float):
    """Returns (F, Z): unnormalized repulsive forces and the Student-t mass."""
    n = Y.shape[0]
    tree = _QuadTree(Y)
    F = np.zeros((n, 2))
    Zp = np.zeros(n)

    pts = np.arange(n)
    nodes = np.zeros(n, dtype=np.int64)  # start everyone at the root
    while len(pts):
        delta = Y[pts] - tree.com[nodes]
        d2 = (delta ** 2).sum(axis=1)
        is_leaf = tree.point[nodes] >= 0
        # Barnes-Hut criterion: cell_size / distance < theta
        far = tree.size[nodes] ** 2 < (theta ** 2) * d2
        accept = is_leaf | far
        # self-interactions contribute nothing
        selfpair = is_leaf & (tree.point[nodes] == pts) & (tree.count[nodes] == 1)
        use = accept & ~selfpair
        if use.any():
            w = 1.0 / (1.0 + d2[use])
            cnt = tree.count[nodes[use]].astype(np.float64)
            # a 1-point-coincident aggregate leaf containing the query point
            # itself must not count that point
            agg_self = is_leaf[use] & (tree.count[nodes[use]] > 1)
            same = np.zeros(use.sum())
            if agg_self.any():
                sel = np.flatnonzero(use)[agg_self]
                coincident = (Y[pts[sel]] == tree.com[nodes[sel]]).all(axis=1)
                same[agg_self] = coincident.astype(np.float64)
            eff = cnt - same
            np.add.at(Zp, pts[use], eff * w)
            np.add.at(F, pts[use], (eff * w * w)[:, None] * delta[use])
        expand = ~accept
        if expand.any():
            child = tree.children[nodes[expand]]  # (m, 4)
            rep_pts = np.repeat(pts[expand], 4)
            flat = child.ravel()
            keep = flat >= 0
            pts = rep_pts[keep]
            nodes = flat[keep]
        else:
            pts = np.empty(0, dtype=np.int64)
            nodes = np.empty(0, dtype=np.int64)
    return F, Zp.sum()


def tsne_gradient_bh(P: np.ndarray, Y: np.ndarray, theta: float) -> np.ndarray:
    """Barnes-Hut gradient: sparse attraction from P's nonzeros, quadtree
    repulsion with opening criterion cell_size / distance < theta."""
    n = Y.shape[0]
    rows, cols = np.nonzero(P)
    delta = Y[rows] - Y[cols]
    w = 1.0 / (1.0 + (delta ** 2).sum(axis=1))
    F_attr = np.zeros((n, 2))
    np.add.at(F_attr, rows, (P[rows, cols] * w)[:, None] * delta)

    F_rep, Z = _bh_repulsion(Y, theta)
    return 4.0 * (F_attr - F_rep / Z)


def run_tsne(fm, cfg: TsneConfig, init: np.ndarray | None = None) -> Embedding2D:
    """Full gradient descent; deterministic for a fixed seed (single thread)."""
    if isinstance(fm, FeatureMatrix):
        X = fm.values
        ids, cities, class_ids = fm.ids, fm.cities, fm.class_ids
    else:
        X = np.asarray(fm, dtype=np.float64)
        ids = [f"row{i}" for i in range(X.shape[0])]
        cities = ["?"] * X.shape[0]
        class_ids = [-1] * X.shape[0]
    n = X.shape[0]
    if cfg.unit_norm:
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        X = X / np.maximum(norms, 1e-12)

    k = int(3 * cfg.perplexity) if cfg.theta > 0 else None
    P = perplexity_affinities(X, cfg.perplexity, k_neighbors=k)

    if init is not None:
        Y = np.array(init, dtype=np.float64, copy=True)
    else:
        rng = derive_rng(cfg.seed, "tsne-init")
        Y = rng.normal(0.0, cfg.init_std, size=(n, 2))
    Y -= Y.mean(axis=0)

    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_every = 1 if n <= 2000 else 25
    trace: list[tuple[int, float]] = []

    for it in range(cfg.n_iter):
        P_eff = P * EXAGGERATION if it < EXAGGERATION_ITERS else P
        if cfg.theta == 0.0:
            grad = tsne_gradient_exact(P_eff, Y)
        else:
            grad = tsne_gradient_bh(P_eff, Y, cfg.theta)

        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.clip(gains, 0.01, None, out=gains)
        momentum = 0.5 if it < MOMENTUM_SWITCH_ITER else 0.8
        velocity = momentum * velocity - cfg.learning_rate * gains * grad
        Y += velocity
        Y -= Y.mean(axis=0)
        if not np.isfinite(Y).all():
            raise TsneError(f"embedding diverged (non-finite values) at iteration {it}")
        if it % kl_every == 0 or it == cfg.n_iter - 1:
            trace.append((it, kl_divergence(P, Y)))

    return Embedding2D(coords=Y, ids=ids, cities=cities, class_ids=class_ids, kl_trace=trace)


# --- file formats ------------------------------------------------------------


def write_embedding(emb: Embedding2D, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "city", "class_id", "y0", "y1"])
        for i in range(emb.n):
            w.writerow([
                emb.ids[i], emb.cities[i], emb.class_ids[i],
                f"{emb.coords[i, 0]:.9g}", f"{emb.coords[i, 1]:.9g}",
            ])


def read_embedding(path) -> Embedding2D:
    ids, cities, class_ids, coords = [], [], [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            ids.append(row["id"])
            cities.append(row["city"])
            class_ids.append(int(row["class_id"]))
            coords.append((float(row["y0"]), float(row["y1"])))
    return Embedding2D(coords=np.array(coords), ids=ids, cities=cities, class_ids=class_ids)


def write_kl_trace(emb: Embedding2D, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "kl"])
        for it, kl in emb.kl_trace:
            w.writerow([it, f"{kl:.9g}"])
