import json

import pytest

from urbanenv.atlas import (
    CLASS_NAMES,
    EXCLUDED,
    AtlasParseError,
    EmptyDatasetError,
    UnknownClassCodeError,
    class_area_distribution,
    consolidate_classes,
    default_classes,
    load_city,
    load_consolidation_map,
    load_palette,
)
from urbanenv.geo import GeoPoint, LocalFrame, polygon_area_m2
from urbanenv.synthcity import make_city


@pytest.fixture(scope="module")
def cmap():
    return load_consolidation_map()


def feature(fid, item, ring):
    return {
        "type": "Feature",
        "properties": {"id": fid, "ITEM": item},
        "geometry": {"type": "Polygon", "coordinates": [ring]},
    }


def small_ring(lng0=9.0, lat0=45.0, d=0.01):
    return [
        [lng0, lat0],
        [lng0 + d, lat0],
        [lng0 + d, lat0 + d],
        [lng0, lat0 + d],
        [lng0, lat0],
    ]


class TestConsolidation:
    def test_map_is_total_over_20_codes(self, cmap):
        assert len(cmap.mapping) == 20

    def test_ten_class_names(self):
        assert len(CLASS_NAMES) == 10
        assert len(set(CLASS_NAMES)) == 10

    def test_urban_fabric_targets_present(self, cmap):
        targets = {CLASS_NAMES[v] for v in cmap.mapping.values() if isinstance(v, int)}
        for name in (
            "High Density Urban Fabric",
            "Medium Density Urban Fabric",
            "Low Density Urban Fabric",
        ):
            assert name in targets

    def test_continuous_urban_fabric_is_high_density(self, cmap):
        cid = consolidate_classes("Continuous urban fabric (S.L. > 80%)", cmap)
        assert CLASS_NAMES[cid] == "High Density Urban Fabric"

    def test_excluded_code(self, cmap):
        assert consolidate_classes("Railways and associated land", cmap) == EXCLUDED

    def test_consolidated_name_is_not_a_source_code(self, cmap):
        with pytest.raises(UnknownClassCodeError):
            consolidate_classes("High Density Urban Fabric", cmap)

    def test_palette_covers_all_classes(self):
        palette = load_palette()
        assert sorted(palette) == list(range(10))
        for rgb in palette.values():
            assert all(0 <= v <= 255 for v in rgb)
        assert len(default_classes()) == 10


class TestLoadCity:
    def test_excluded_feature_dropped(self, tmp_path, cmap):
        doc = {
            "type": "FeatureCollection",
            "features": [
                feature("a", "Forests", small_ring()),
                feature("b", "Water bodies", small_ring(lng0=9.05)),
                feature("c", "Port areas", small_ring(lng0=9.1)),
            ],
        }
        path = tmp_path / "city.geojson"
        path.write_text(json.dumps(doc))
        ds = load_city(path, "fixture", cmap)
        assert len(ds.polygons) == 2
        assert not ds.rejects

    def test_open_ring_rejected(self, tmp_path, cmap):
        bad = small_ring()[:-1]  # drop closure
        doc = {
            "type": "FeatureCollection",
            "features": [feature("ok", "Forests", small_ring()), feature("bad", "Forests", bad)],
        }
        path = tmp_path / "city.geojson"
        path.write_text(json.dumps(doc))
        ds = load_city(path, "fixture", cmap)
        assert len(ds.polygons) == 1
        assert ds.rejects and ds.rejects[0][0] == "bad"

    def test_unknown_code_recorded_not_fatal(self, tmp_path, cmap):
        doc = {
            "type": "FeatureCollection",
            "features": [
                feature("ok", "Forests", small_ring()),
                feature("odd", "Cropcircles", small_ring(lng0=9.1)),
            ],
        }
        path = tmp_path / "city.geojson"
        path.write_text(json.dumps(doc))
        ds = load_city(path, "fixture", cmap)
        assert len(ds.polygons) == 1
        assert ds.rejects[0] == ("odd", "unknown class code 'Cropcircles'")

    def test_malformed_json_reports_line(self, tmp_path, cmap):
        path = tmp_path / "bad.geojson"
        path.write_text('{"type": "FeatureCollection", "features": [}')
        with pytest.raises(AtlasParseError, match="line 1"):
            load_city(path, "fixture", cmap)

    def test_multipolygon_split(self, tmp_path, cmap):
        doc = {
            "type": "FeatureCollection",
            "features": [
                {
                    "type": "Feature",
                    "properties": {"id": "m", "ITEM": "Forests"},
                    "geometry": {
                        "type": "MultiPolygon",
                        "coordinates": [[small_ring()], [small_ring(lng0=9.1)]],
                    },
                }
            ],
        }
        path = tmp_path / "city.geojson"
        path.write_text(json.dumps(doc))
        ds = load_city(path, "fixture", cmap)
        assert {p.polygon_id for p in ds.polygons} == {"m-0", "m-1"}

    def test_deterministic_ordering(self, tmp_path, cmap):
        path = tmp_path / "city.geojson"
        path.write_text(json.dumps(make_city(seed=3)))
        a = load_city(path, "x", cmap)
        b = load_city(path, "x", cmap)
        assert [p.polygon_id for p in a.polygons] == [p.polygon_id for p in b.polygons]
        assert [p.area_m2 for p in a.polygons] == [p.area_m2 for p in b.polygons]

    def test_loaded_area_matches_geometry(self, tmp_path, cmap):
        path = tmp_path / "city.geojson"
        path.write_text(json.dumps(make_city(seed=5)))
        ds = load_city(path, "x", cmap)
        for p in ds.polygons:
            xs = [v[0] for v in p.geometry.exterior]
            ys = [v[1] for v in p.geometry.exterior]
            frame = LocalFrame(GeoPoint((min(ys) + max(ys)) / 2, (min(xs) + max(xs)) / 2))
            assert p.area_m2 == pytest.approx(polygon_area_m2(p.geometry, frame), rel=1e-6)


class TestAreaDistribution:
    def _dataset(self, tmp_path, cmap, features):
        path = tmp_path / "c.geojson"
        path.write_text(json.dumps({"type": "FeatureCollection", "features": features}))
        return load_city(path, "fixture", cmap)

    def test_two_equal_areas(self, tmp_path, cmap):
        ds = self._dataset(
            tmp_path,
            cmap,
            [
                feature("a", "Forests", small_ring(lat0=45.0)),
                feature("b", "Water bodies", small_ring(lat0=45.0, lng0=9.5)),
            ],
        )
        dist = class_area_distribution(ds)
        assert dist["fraction"][2] == pytest.approx(0.5, rel=1e-6)
        assert dist["fraction"][9] == pytest.approx(0.5, rel=1e-6)

    def test_single_class(self, tmp_path, cmap):
        ds = self._dataset(tmp_path, cmap, [feature("a", "Forests", small_ring())])
        assert class_area_distribution(ds)["fraction"][2] == pytest.approx(1.0)

    def test_fractions_sum_to_one(self, tmp_path, cmap):
        path = tmp_path / "c.geojson"
        path.write_text(json.dumps(make_city(seed=9)))
        ds = load_city(path, "x", cmap)
        dist = class_area_distribution(ds)
        assert sum(dist["fraction"].values()) == pytest.approx(1.0, abs=1e-9)

    def test_ten_class_fixture_hand_summed(self, tmp_path, cmap):
        # one polygon per class, sides 0.01..0.055 deg; totals checked by hand
        sources = {
            0: "Agricultural areas, semi-natural areas and wetlands",
            1: "Airports",
            2: "Forests",
        }
        feats, expected = [], {}
        for cid, item in sources.items():
            d = 0.01 * (cid + 1)
            feats.append(feature(f"p{cid}", item, small_ring(lng0=8 + cid, d=d)))
        ds = self._dataset(tmp_path, cmap, feats)
        dist = class_area_distribution(ds)
        # relative areas scale as d^2: 1 : 4 : 9
        total = dist["area_m2"][0] + dist["area_m2"][1] + dist["area_m2"][2]
        assert dist["fraction"][0] == pytest.approx(dist["area_m2"][0] / total)
        assert dist["area_m2"][1] / dist["area_m2"][0] == pytest.approx(4.0, rel=1e-3)
        assert dist["area_m2"][2] / dist["area_m2"][0] == pytest.approx(9.0, rel=1e-3)

    def test_empty_dataset_error(self, tmp_path, cmap):
        path = tmp_path / "c.geojson"
        path.write_text(json.dumps({"type": "FeatureCollection", "features": []}))
        with pytest.raises(EmptyDatasetError):
            load_city(path, "fixture", cmap)
