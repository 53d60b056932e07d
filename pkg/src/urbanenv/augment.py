"""Deterministic affine augmentation: flips, shear, scale, rotation.

The composition order is fixed: flip, then shear, then scale, then rotation,
all about the image center. Resampling is bilinear with reflect padding
(mirror without repeating the edge row), so rotations do not introduce fake
black borders.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .imagery import TileImage
from .sampler import derive_rng

SHEAR_MAX_RAD = 0.1
SCALE_MAX = 1.2
ROTATION_MAX_DEG = 15.0

IDENTITY_FIELDS = dict(hflip=False, vflip=False, shear_rad=0.0, scale=1.0, rotation_deg=0.0)


@dataclass(frozen=True)
class AugmentParams:
    hflip: bool = False
    vflip: bool = False
    shear_rad: float = 0.0
    scale: float = 1.0
    rotation_deg: float = 0.0

    def __post_init__(self):
        if not (-SHEAR_MAX_RAD <= self.shear_rad <= SHEAR_MAX_RAD):
            raise ValueError(f"shear {self.shear_rad} outside ±{SHEAR_MAX_RAD} rad")
        if not (1.0 / SCALE_MAX <= self.scale <= SCALE_MAX):
            raise ValueError(f"scale {self.scale} outside [{1/SCALE_MAX:.4f}, {SCALE_MAX}]")
        if not (-ROTATION_MAX_DEG <= self.rotation_deg <= ROTATION_MAX_DEG):
            raise ValueError(f"rotation {self.rotation_deg} outside ±{ROTATION_MAX_DEG} deg")

    def matrix(self) -> np.ndarray:
        """Forward 2x2 point map: flip ∘ shear ∘ scale ∘ rotate."""
        th = math.radians(self.rotation_deg)
        rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        sc = np.array([[self.scale, 0.0], [0.0, self.scale]])
        sh = np.array([[1.0, math.tan(self.shear_rad)], [0.0, 1.0]])
        fl = np.array([[-1.0 if self.hflip else 1.0, 0.0], [0.0, -1.0 if self.vflip else 1.0]])
        return fl @ sh @ sc @ rot


def sample_params(seed: int, index: int, scale_mode: str = "symmetric") -> AugmentParams:
    """Draw augmentation parameters deterministically from (seed, index).

    scale_mode "symmetric" draws log-uniform over [1/1.2, 1.2] (unbiased in
    scale); "upscale_only" draws uniform over [1.0, 1.2].
    """
    rng = derive_rng(seed, "augment", index)
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)
    shear = float(rng.uniform(-SHEAR_MAX_RAD, SHEAR_MAX_RAD))
    if scale_mode == "symmetric":
        scale = float(math.exp(rng.uniform(-math.log(SCALE_MAX), math.log(SCALE_MAX))))
    elif scale_mode == "upscale_only":
        scale = float(rng.uniform(1.0, SCALE_MAX))
    else:
        raise ValueError(f"unknown scale_mode {scale_mode!r}")
    rotation = float(rng.uniform(-ROTATION_MAX_DEG, ROTATION_MAX_DEG))
    return AugmentParams(hflip=hflip, vflip=vflip, shear_rad=shear, scale=scale, rotation_deg=rotation)


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Mirror indices into [0, n): ..., 2, 1, 0, 1, 2, ..., n-1, n-2, ..."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def apply_affine(img: TileImage, p: AugmentParams) -> TileImage:
    """Resample the image under the composed affine; output size unchanged."""
    if img.width != img.height:
        raise ValueError("augmentation expects square tiles")
    n = img.width
    arr = img.to_array().astype(np.float64)

    inv = np.linalg.inv(p.matrix())
    c = (n - 1) / 2.0
    ys, xs = np.mgrid[0:n, 0:n]
    dx = xs - c
    dy = ys - c
    src_x = inv[0, 0] * dx + inv[0, 1] * dy + c
    src_y = inv[1, 0] * dx + inv[1, 1] * dy + c

    x0 = np.floor(src_x).astype(int)
    y0 = np.floor(src_y).astype(int)
    fx = src_x - x0
    fy = src_y - y0

    x0r = _reflect_index(x0, n)
    x1r = _reflect_index(x0 + 1, n)
    y0r = _reflect_index(y0, n)
    y1r = _reflect_index(y0 + 1, n)

    out = np.empty_like(arr)
    for ch in range(3):
        plane = arr[:, :, ch]
        top = plane[y0r, x0r] * (1 - fx) + plane[y0r, x1r] * fx
        bottom = plane[y1r, x0r] * (1 - fx) + plane[y1r, x1r] * fx
        out[:, :, ch] = top * (1 - fy) + bottom * fy

    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return TileImage.from_array(out, source=img.source)


def export_augmented(images, out_dir, seed: int, n_variants: int = 1, scale_mode: str = "symmetric"):
    """Write augmented PNGs plus a params CSV for full reproducibility.

    images: iterable of (sample_id, TileImage). Returns written file names.
    """
    from pathlib import Path

    from .imagery import encode_png

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with open(out_dir / "augment_params.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "variant", "hflip", "vflip", "shear_rad", "scale", "rotation_deg"])
        index = 0
        for sample_id, img in images:
            for v in range(n_variants):
                params = sample_params(seed, index, scale_mode=scale_mode)
                index += 1
                name = f"{sample_id}_aug{v}.png"
                (out_dir / name).write_bytes(encode_png(apply_affine(img, params)))
                writer.writerow([
                    sample_id, v, int(params.hflip), int(params.vflip),
                    f"{params.shear_rad:.9g}", f"{params.scale:.9g}", f"{params.rotation_deg:.9g}",
                ])
                written.append(name)
    return written
