"""Static-maps tile fetching: cache, daily budget, retries, synthetic mode.

The HTTP transport is injectable so tests can run against a mock; cache
writes are atomic (temp file + rename) and the budget counter persists
across runs with a UTC-day reset.
"""

from __future__ import annotations

import hashlib
import io
import math
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import requests
from PIL import Image

from .geo import TileSpec

API_KEY_ENV = "MAPS_API_KEY"


class ConfigurationError(RuntimeError):
    pass


class QuotaExhaustedError(RuntimeError):
    pass


class FetchError(RuntimeError):
    """Permanent fetch failure (4xx or retries exhausted)."""


@dataclass
class FetchConfig:
    base_url: str = "https://maps.googleapis.com/maps/api/staticmap"
    api_key: str | None = None  # falls back to $MAPS_API_KEY
    daily_budget: int = 25_000
    max_concurrent: int = 8
    max_attempts: int = 5
    backoff_base_s: float = 1.0
    cache_dir: str | Path = "cache"

    def __post_init__(self):
        if self.daily_budget <= 0:
            raise ValueError("daily_budget must be positive")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")

    def resolve_key(self) -> str:
        key = self.api_key or os.environ.get(API_KEY_ENV)
        if not key:
            raise ConfigurationError(f"no API key: set {API_KEY_ENV} or FetchConfig.api_key")
        return key


@dataclass(frozen=True)
class TileImage:
    width: int
    height: int
    rgb: bytes  # row-major, 3 bytes per pixel
    source: str  # network | cache | synthetic

    def __post_init__(self):
        if len(self.rgb) != 3 * self.width * self.height:
            raise ValueError("pixel buffer length mismatch")

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.rgb, dtype=np.uint8).reshape(self.height, self.width, 3)

    @classmethod
    def from_array(cls, arr: np.ndarray, source: str) -> "TileImage":
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        h, w, _ = arr.shape
        return cls(width=w, height=h, rgb=arr.tobytes(), source=source)


def build_request_url(tile: TileSpec, cfg: FetchConfig) -> str:
    key = cfg.resolve_key()
    return (
        f"{cfg.base_url}?center={tile.center.lat:.6f},{tile.center.lng:.6f}"
        f"&zoom={tile.zoom}&size={tile.width_px}x{tile.height_px}"
        f"&maptype=satellite&key={key}"
    )


def cache_path(tile: TileSpec, cfg: FetchConfig) -> Path:
    return (
        Path(cfg.cache_dir)
        / str(tile.zoom)
        / f"{tile.center.lat:.6f}_{tile.center.lng:.6f}_{tile.width_px}x{tile.height_px}.png"
    )


class BudgetLedger:
    """Serialized authority over the daily network-request budget.

    State persists in a one-line text file: "<UTC date> <count>". The count
    resets when the UTC date changes.
    """

    def __init__(self, path: str | Path, daily_budget: int):
        self.path = Path(path)
        self.daily_budget = daily_budget
        self._lock = threading.Lock()

    @staticmethod
    def _today() -> str:
        return datetime.now(timezone.utc).strftime("%Y-%m-%d")

    def _load(self) -> tuple[str, int]:
        if not self.path.exists():
            return (self._today(), 0)
        date, count = self.path.read_text().split()
        return (date, int(count))

    def _store(self, date: str, count: int) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(f"{date} {count}\n")
        tmp.replace(self.path)

    def spend(self, n: int = 1) -> None:
        """Reserve n requests or raise QuotaExhaustedError."""
        with self._lock:
            date, count = self._load()
            today = self._today()
            if date != today:
                date, count = today, 0
            if count + n > self.daily_budget:
                raise QuotaExhaustedError(
                    f"daily budget {self.daily_budget} exhausted ({count} spent)"
                )
            self._store(date, count + n)

    def spent_today(self) -> int:
        date, count = self._load()
        return count if date == self._today() else 0


def _default_transport(url: str, timeout: float = 30.0):
    resp = requests.get(url, timeout=timeout)
    return resp.status_code, resp.content


def _decode_png(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return np.asarray(img)


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


class TileFetcher:
    """Cache-first tile fetcher with retries and budget accounting."""

    def __init__(self, cfg: FetchConfig, transport=None, ledger: BudgetLedger | None = None, sleep=time.sleep):
        self.cfg = cfg
        self.transport = transport or _default_transport
        self.ledger = ledger or BudgetLedger(Path(cfg.cache_dir) / "budget.txt", cfg.daily_budget)
        self._sleep = sleep
        self._jitter = random.Random(0)

    def fetch_tile(self, tile: TileSpec) -> TileImage:
        path = cache_path(tile, self.cfg)
        if path.exists():
            arr = _decode_png(path.read_bytes())
            return TileImage.from_array(arr, source="cache")

        url = build_request_url(tile, self.cfg)
        self.ledger.spend(1)
        last_error = None
        for attempt in range(self.cfg.max_attempts):
            status, body = self.transport(url)
            if status == 200:
                arr = _decode_png(body)
                _write_atomic(path, body)
                return TileImage.from_array(arr, source="network")
            if 400 <= status < 500:
                raise FetchError(f"permanent failure HTTP {status} for {path.name}")
            last_error = f"HTTP {status}"
            if attempt < self.cfg.max_attempts - 1:
                backoff = self.cfg.backoff_base_s * (2 ** attempt)
                self._sleep(backoff * self._jitter.uniform(0.5, 1.5))
        raise FetchError(f"retries exhausted ({last_error}) for {path.name}")

    def fetch_batch(self, tiles) -> list[TileImage]:
        with ThreadPoolExecutor(max_workers=self.cfg.max_concurrent) as pool:
            return list(pool.map(self.fetch_tile, tiles))


# --- synthetic offline tiles -------------------------------------------------

# Per-class base colors, pairwise separated by well over 10/255 in at least
# one channel so histogram features distinguish the generators.
_CLASS_BASE_RGB = np.array(
    [
        (235, 235, 150),  # agricultural: pale fields
        (170, 170, 200),  # airports: pavement
        (20, 90, 30),     # forests
        (110, 200, 80),   # green urban areas
        (120, 60, 50),    # high density fabric
        (160, 110, 180),  # industrial/commercial
        (230, 190, 180),  # low density fabric
        (200, 120, 110),  # medium density fabric
        (70, 220, 160),   # sports and leisure
        (30, 110, 220),   # water
    ],
    dtype=np.float64,
)

# Spatial texture frequency per class (stripes/blocks at different scales).
_CLASS_FREQ = [3, 1, 11, 7, 17, 5, 9, 13, 4, 2]


def synthetic_tile(tile: TileSpec, class_id: int, seed: int = 0) -> TileImage:
    """Deterministic procedural texture standing in for satellite imagery."""
    if not (0 <= class_id <= 9):
        raise ValueError(f"class_id {class_id} outside 0..9")
    material = f"{tile.center.lat:.6f}:{tile.center.lng:.6f}:{class_id}:{seed}".encode()
    digest = hashlib.blake2b(material, digest_size=8).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "big")))

    h, w = tile.height_px, tile.width_px
    yy, xx = np.mgrid[0:h, 0:w]
    freq = _CLASS_FREQ[class_id]
    phase = rng.uniform(0, 2 * math.pi)
    pattern = np.sin(2 * math.pi * freq * (xx + yy) / max(h, w) + phase)
    noise = rng.normal(0.0, 6.0, size=(h, w))

    img = np.empty((h, w, 3), dtype=np.float64)
    for ch in range(3):
        img[:, :, ch] = _CLASS_BASE_RGB[class_id, ch] + 12.0 * pattern + noise
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return TileImage.from_array(img, source="synthetic")


def encode_png(img: TileImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img.to_array()).save(buf, format="PNG")
    return buf.getvalue()


def materialize_synthetic(records, cfg: FetchConfig, seed: int = 0) -> None:
    """Write synthetic tiles into the cache so offline runs mirror fetches."""
    for r in records:
        path = cache_path(r.tile, cfg)
        if not path.exists():
            img = synthetic_tile(r.tile, r.class_id, seed)
            _write_atomic(path, encode_png(img))


def load_cached_tile(tile: TileSpec, cfg: FetchConfig) -> TileImage:
    path = cache_path(tile, cfg)
    if not path.exists():
        raise FileNotFoundError(path)
    return TileImage.from_array(_decode_png(path.read_bytes()), source="cache")
