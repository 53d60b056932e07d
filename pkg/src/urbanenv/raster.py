"""Class-map and per-class probability rasters from labeled grids.

Output is binary P6 PPM — codec-free, so renders are bit-exact across
platforms. Class maps use the shipped palette; unlabeled cells get a
neutral gray. Probability maps are one grayscale image per class with
pixel value round(255 * p).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .atlas import N_CLASSES, load_palette
from .sampler import UNLABELED, LabeledGrid

UNLABELED_COLOR = (128, 128, 128)
PROB_SUM_TOL = 1e-6


class RasterError(ValueError):
    pass


@dataclass(frozen=True)
class RasterImage:
    rows: int
    cols: int
    rgb: bytes  # 3 * rows * cols

    def __post_init__(self):
        if len(self.rgb) != 3 * self.rows * self.cols:
            raise RasterError(
                f"rgb payload {len(self.rgb)} bytes != 3*{self.rows}*{self.cols}"
            )

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.rgb, dtype=np.uint8).reshape(self.rows, self.cols, 3)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RasterImage":
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        return cls(rows=arr.shape[0], cols=arr.shape[1], rgb=arr.tobytes())


def _labels_for_render(grid: LabeledGrid) -> np.ndarray:
    """Argmax of per-cell probabilities when present (ties to the smaller
    class id, matching the grid builder), else the stored labels."""
    if grid.probs is None:
        return grid.labels
    return np.argmax(grid.probs, axis=2)


def render_class_map(grid: LabeledGrid, palette: dict[int, tuple[int, int, int]] | None = None,
                     scale: int = 1) -> RasterImage:
    if palette is None:
        palette = load_palette()
    if scale < 1:
        raise RasterError("scale must be >= 1")
    labels = _labels_for_render(grid)
    present = set(np.unique(labels).tolist()) - {UNLABELED}
    missing = present - set(palette)
    if missing:
        raise RasterError(f"palette missing classes {sorted(missing)}")

    lut = np.tile(np.array(UNLABELED_COLOR, dtype=np.uint8), (N_CLASSES + 1, 1))
    for cid, color in palette.items():
        lut[cid] = color
    arr = lut[np.where(labels == UNLABELED, N_CLASSES, labels)]
    if scale > 1:
        arr = np.repeat(np.repeat(arr, scale, axis=0), scale, axis=1)
    return RasterImage.from_array(arr)


def render_probability_maps(grid: LabeledGrid, scale: int = 1) -> list[RasterImage]:
    if grid.probs is None:
        raise RasterError("grid has no per-cell probabilities")
    probs = np.asarray(grid.probs, dtype=np.float64)
    if probs.shape != (grid.n_rows, grid.n_cols, N_CLASSES):
        raise RasterError(f"probability grid shape {probs.shape} unexpected")
    sums = probs.sum(axis=2)
    bad = np.abs(sums - 1.0) > PROB_SUM_TOL
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise RasterError(f"cell ({r},{c}) probabilities sum to {sums[r, c]}")

    images = []
    for cid in range(N_CLASSES):
        gray = np.rint(255.0 * probs[:, :, cid]).astype(np.uint8)
        arr = np.repeat(gray[:, :, None], 3, axis=2)
        if scale > 1:
            arr = np.repeat(np.repeat(arr, scale, axis=0), scale, axis=1)
        images.append(RasterImage.from_array(arr))
    return images


def write_ppm(img: RasterImage, path) -> None:
    header = f"P6\n{img.cols} {img.rows}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header + img.rgb)


def read_ppm(path) -> RasterImage:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise RasterError(f"{path}: not a P6 file")
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[2] != b"255":
        raise RasterError(f"{path}: malformed header")
    cols, rows = (int(v) for v in parts[1].split())
    rgb = parts[3]
    if len(rgb) != 3 * rows * cols:
        raise RasterError(f"{path}: payload {len(rgb)} bytes, expected {3 * rows * cols}")
    return RasterImage(rows=rows, cols=cols, rgb=rgb)


def write_legend(palette: dict[int, tuple[int, int, int]], class_names, path) -> None:
    with open(path, "w") as f:
        for cid in sorted(palette):
            r, g, b = palette[cid]
            f.write(f"{cid}\t{r},{g},{b}\t{class_names[cid]}\n")
