import threading

import numpy as np
import pytest

from urbanenv.geo import GeoPoint, TileSpec
from urbanenv.imagery import (
    BudgetLedger,
    ConfigurationError,
    FetchConfig,
    FetchError,
    QuotaExhaustedError,
    TileFetcher,
    TileImage,
    build_request_url,
    cache_path,
    encode_png,
    load_cached_tile,
    materialize_synthetic,
    synthetic_tile,
)


def tile(lat=41.39, lng=2.17, zoom=17, px=224):
    return TileSpec(center=GeoPoint(lat, lng), zoom=zoom, width_px=px, height_px=px)


def png_transport(color=(10, 20, 30), px=224):
    body = encode_png(
        TileImage.from_array(np.full((px, px, 3), color, dtype=np.uint8), "synthetic")
    )

    def transport(url):
        return 200, body

    return transport


class TestRequestUrl:
    def test_template(self, tmp_path):
        cfg = FetchConfig(base_url="https://example/api", api_key="K", cache_dir=tmp_path)
        url = build_request_url(tile(41.39, 2.17), cfg)
        assert url == (
            "https://example/api?center=41.390000,2.170000"
            "&zoom=17&size=224x224&maptype=satellite&key=K"
        )

    def test_stable_and_rounded(self, tmp_path):
        cfg = FetchConfig(api_key="K", cache_dir=tmp_path)
        a = build_request_url(tile(41.3900004, 2.17), cfg)
        b = build_request_url(tile(41.39, 2.17), cfg)
        assert a == b
        assert "center=41.390000," in a

    def test_missing_key(self, tmp_path, monkeypatch):
        monkeypatch.delenv("MAPS_API_KEY", raising=False)
        cfg = FetchConfig(cache_dir=tmp_path)
        with pytest.raises(ConfigurationError):
            build_request_url(tile(), cfg)

    def test_key_from_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MAPS_API_KEY", "ENVK")
        cfg = FetchConfig(cache_dir=tmp_path)
        assert build_request_url(tile(), cfg).endswith("key=ENVK")


class TestCacheAndBudget:
    def test_cache_hit_spends_no_budget(self, tmp_path):
        cfg = FetchConfig(api_key="K", cache_dir=tmp_path)
        fetcher = TileFetcher(cfg, transport=png_transport())
        t = tile()
        first = fetcher.fetch_tile(t)
        assert first.source == "network"
        assert fetcher.ledger.spent_today() == 1
        second = fetcher.fetch_tile(t)
        assert second.source == "cache"
        assert fetcher.ledger.spent_today() == 1
        assert second.rgb == first.rgb

    def test_budget_exhaustion(self, tmp_path):
        cfg = FetchConfig(api_key="K", cache_dir=tmp_path, daily_budget=1)
        fetcher = TileFetcher(cfg, transport=png_transport())
        fetcher.fetch_tile(tile(lat=41.0))
        with pytest.raises(QuotaExhaustedError):
            fetcher.fetch_tile(tile(lat=42.0))

    def test_utc_day_reset(self, tmp_path):
        ledger = BudgetLedger(tmp_path / "budget.txt", daily_budget=2)
        (tmp_path / "budget.txt").write_text("1999-01-01 2\n")
        assert ledger.spent_today() == 0
        ledger.spend(2)  # yesterday's count does not block today
        assert ledger.spent_today() == 2

    def test_default_budget_is_25000(self, tmp_path):
        assert FetchConfig(api_key="K", cache_dir=tmp_path).daily_budget == 25_000

    def test_cache_path_pure_function_of_coords(self, tmp_path):
        cfg = FetchConfig(api_key="K", cache_dir=tmp_path)
        p1 = cache_path(tile(41.3900004, 2.17), cfg)
        p2 = cache_path(tile(41.39, 2.17), cfg)
        assert p1 == p2
        assert p1.name == "41.390000_2.170000_224x224.png"
        assert p1.parent.name == "17"

    def test_no_partial_files_on_write(self, tmp_path):
        cfg = FetchConfig(api_key="K", cache_dir=tmp_path)
        fetcher = TileFetcher(cfg, transport=png_transport())
        fetcher.fetch_tile(tile())
        leftovers = list(tmp_path.rglob("*.tmp"))
        assert leftovers == []


class TestRetries:
    def test_4xx_permanent(self, tmp_path):
        cfg = FetchConfig(api_key="K", cache_dir=tmp_path)
        fetcher = TileFetcher(cfg, transport=lambda url: (404, b""))
        with pytest.raises(FetchError, match="404"):
            fetcher.fetch_tile(tile())

    def test_5xx_retried_then_fails(self, tmp_path):
        calls = []

        def transport(url):
            calls.append(url)
            return 503, b""

        cfg = FetchConfig(api_key="K", cache_dir=tmp_path, max_attempts=3)
        fetcher = TileFetcher(cfg, transport=transport, sleep=lambda s: None)
        with pytest.raises(FetchError, match="retries exhausted"):
            fetcher.fetch_tile(tile())
        assert len(calls) == 3

    def test_5xx_then_success(self, tmp_path):
        state = {"n": 0}
        ok = png_transport()

        def transport(url):
            state["n"] += 1
            if state["n"] < 3:
                return 500, b""
            return ok(url)

        cfg = FetchConfig(api_key="K", cache_dir=tmp_path)
        fetcher = TileFetcher(cfg, transport=transport, sleep=lambda s: None)
        assert fetcher.fetch_tile(tile()).source == "network"


class TestConcurrency:
    def test_in_flight_bounded_by_max_concurrent(self, tmp_path):
        max_concurrent = 4
        lock = threading.Lock()
        state = {"in_flight": 0, "peak": 0}
        ok = png_transport()
        gate = threading.Event()

        def transport(url):
            with lock:
                state["in_flight"] += 1
                state["peak"] = max(state["peak"], state["in_flight"])
            gate.wait(0.02)
            with lock:
                state["in_flight"] -= 1
            return ok(url)

        cfg = FetchConfig(api_key="K", cache_dir=tmp_path, max_concurrent=max_concurrent)
        fetcher = TileFetcher(cfg, transport=transport)
        tiles = [tile(lat=41.0 + i * 0.01) for i in range(20)]
        images = fetcher.fetch_batch(tiles)
        assert len(images) == 20
        assert 1 <= state["peak"] <= max_concurrent
        assert fetcher.ledger.spent_today() == 20

    def test_batch_never_exceeds_budget(self, tmp_path):
        cfg = FetchConfig(api_key="K", cache_dir=tmp_path, daily_budget=10, max_concurrent=8)
        calls = []
        ok = png_transport()

        def transport(url):
            calls.append(url)
            return ok(url)

        fetcher = TileFetcher(cfg, transport=transport)
        tiles = [tile(lat=41.0 + i * 0.01) for i in range(30)]
        with pytest.raises(QuotaExhaustedError):
            for t in tiles:
                fetcher.fetch_tile(t)
        assert len(calls) == 10
        assert fetcher.ledger.spent_today() == 10


class TestSyntheticTiles:
    def test_deterministic(self):
        t = tile()
        a = synthetic_tile(t, 3, seed=7)
        b = synthetic_tile(t, 3, seed=7)
        assert a.rgb == b.rgb

    def test_size_honors_tile_px(self):
        t = tile(px=96)
        img = synthetic_tile(t, 0, seed=0)
        assert img.width == img.height == 96
        assert len(img.rgb) == 3 * 96 * 96

    def test_class_means_pairwise_separated(self):
        t = tile()
        means = [synthetic_tile(t, c, seed=1).to_array().mean(axis=(0, 1)) for c in range(10)]
        for i in range(10):
            for j in range(i + 1, 10):
                assert np.abs(means[i] - means[j]).max() > 10.0

    def test_invalid_class(self):
        with pytest.raises(ValueError):
            synthetic_tile(tile(), 10, seed=0)

    def test_materialize_then_load(self, tmp_path):
        from urbanenv.sampler import SampleRecord

        cfg = FetchConfig(api_key="K", cache_dir=tmp_path)
        rec = SampleRecord(sample_id="s", tile=tile(), class_id=2, polygon_id="p", city="t")
        materialize_synthetic([rec], cfg, seed=0)
        img = load_cached_tile(rec.tile, cfg)
        ref = synthetic_tile(rec.tile, 2, seed=0)
        assert img.rgb == ref.rgb  # PNG round-trip is lossless
