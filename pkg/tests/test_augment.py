import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urbanenv.augment import (
    ROTATION_MAX_DEG,
    SCALE_MAX,
    SHEAR_MAX_RAD,
    AugmentParams,
    apply_affine,
    export_augmented,
    sample_params,
)
from urbanenv.geo import GeoPoint, TileSpec
from urbanenv.imagery import TileImage, synthetic_tile


def synth(class_id=4, px=64):
    spec = TileSpec(center=GeoPoint(45.0, 9.0), zoom=17, width_px=px, height_px=px)
    return synthetic_tile(spec, class_id, seed=0)


class TestSampleParams:
    def test_reproducible(self):
        assert sample_params(5, 17) == sample_params(5, 17)
        assert sample_params(5, 17) != sample_params(5, 18)

    def test_bounds_and_mean(self):
        shears = np.array([sample_params(1, i).shear_rad for i in range(100_000)])
        assert shears.min() >= -SHEAR_MAX_RAD and shears.max() <= SHEAR_MAX_RAD
        assert abs(shears.mean()) < 0.002

    def test_scale_never_exceeds_120_percent(self):
        scales = [sample_params(2, i).scale for i in range(20_000)]
        assert max(scales) <= SCALE_MAX
        assert min(scales) >= 1.0 / SCALE_MAX

    def test_upscale_only_mode(self):
        scales = [sample_params(2, i, scale_mode="upscale_only").scale for i in range(5_000)]
        assert min(scales) >= 1.0

    def test_rotation_bounds(self):
        rots = [sample_params(3, i).rotation_deg for i in range(5_000)]
        assert -ROTATION_MAX_DEG <= min(rots) and max(rots) <= ROTATION_MAX_DEG

    def test_param_validation(self):
        with pytest.raises(ValueError):
            AugmentParams(shear_rad=0.2)
        with pytest.raises(ValueError):
            AugmentParams(scale=1.5)
        with pytest.raises(ValueError):
            AugmentParams(rotation_deg=20.0)


class TestApplyAffine:
    def test_identity_is_bitwise_exact(self):
        img = synth()
        out = apply_affine(img, AugmentParams())
        assert out.rgb == img.rgb

    def test_double_hflip_is_exact(self):
        img = synth()
        p = AugmentParams(hflip=True)
        out = apply_affine(apply_affine(img, p), p)
        assert out.rgb == img.rgb

    def test_hflip_matches_numpy_flip(self):
        img = synth()
        out = apply_affine(img, AugmentParams(hflip=True))
        assert (out.to_array() == img.to_array()[:, ::-1, :]).all()

    def test_vflip_matches_numpy_flip(self):
        img = synth()
        out = apply_affine(img, AugmentParams(vflip=True))
        assert (out.to_array() == img.to_array()[::-1, :, :]).all()

    def test_rotation_preserves_mean_intensity(self):
        img = synth()
        out = apply_affine(img, AugmentParams(rotation_deg=15.0))
        assert out.to_array().mean() == pytest.approx(img.to_array().mean(), rel=0.01)

    def test_output_dimensions_and_range(self):
        img = synth(px=96)
        out = apply_affine(img, AugmentParams(shear_rad=0.1, scale=1.2, rotation_deg=-15.0))
        assert out.width == out.height == 96
        arr = out.to_array()
        assert arr.min() >= 0 and arr.max() <= 255

    def test_non_square_rejected(self):
        img = TileImage.from_array(np.zeros((10, 20, 3), dtype=np.uint8), "synthetic")
        with pytest.raises(ValueError):
            apply_affine(img, AugmentParams())

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_same_params_same_bytes(self, index):
        img = synth()
        p = sample_params(9, index)
        assert apply_affine(img, p).rgb == apply_affine(img, p).rgb


class TestExport:
    def test_pngs_and_params_csv(self, tmp_path):
        img = synth()
        written = export_augmented([("s0", img), ("s1", img)], tmp_path, seed=3, n_variants=2)
        assert len(written) == 4
        assert (tmp_path / "s0_aug0.png").exists()
        lines = (tmp_path / "augment_params.csv").read_text().strip().splitlines()
        assert len(lines) == 5  # header + 4 rows
        assert lines[0].startswith("sample_id,variant,hflip")
