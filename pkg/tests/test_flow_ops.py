"""Warping, pyramid construction, and derivative stencils."""

import numpy as np
import pytest

from twostream.errors import ConfigError, ShapeError
from twostream.flow.pyramid import (MIN_LEVEL_DIM, build_pyramid, deriv_x,
                                    deriv_y, pyramid_level_count,
                                    resize_bilinear, warp_bilinear)


def textured(h, w, seed=0):
    return np.random.default_rng(seed).uniform(0.1, 0.9, (h, w))


class TestWarpBilinear:
    def test_zero_flow_is_identity(self):
        img = textured(20, 24)
        z = np.zeros_like(img)
        assert np.array_equal(warp_bilinear(img, z, z), img)

    def test_integer_flow_samples_next_column(self):
        # u=1 reads img[i, j+1]: content appears shifted left by one column.
        img = textured(12, 16)
        u = np.ones_like(img)
        v = np.zeros_like(img)
        out = warp_bilinear(img, u, v)
        assert np.array_equal(out[:, :-1], img[:, 1:])
        # Last column clamps to the border instead of reading past it.
        assert np.array_equal(out[:, -1], img[:, -1])

    def test_integer_flow_vertical(self):
        img = textured(12, 16, seed=3)
        u = np.zeros_like(img)
        v = np.full_like(img, 2.0)
        out = warp_bilinear(img, u, v)
        assert np.array_equal(out[:-2, :], img[2:, :])

    def test_half_pixel_flow_exact_on_linear_ramp(self):
        # Bilinear interpolation reproduces linear functions exactly.
        ramp = np.tile(np.arange(10, dtype=np.float64), (6, 1))
        u = np.full_like(ramp, 0.5)
        v = np.zeros_like(ramp)
        out = warp_bilinear(ramp, u, v)
        assert np.allclose(out[:, :-1], ramp[:, :-1] + 0.5, atol=1e-12)

    def test_out_of_range_samples_clamp(self):
        img = textured(8, 8, seed=1)
        u = np.full_like(img, 100.0)
        v = np.full_like(img, -100.0)
        out = warp_bilinear(img, u, v)
        assert np.all(out == img[0, -1])

    def test_shape_mismatch_rejected(self):
        img = textured(8, 8)
        with pytest.raises(ShapeError):
            warp_bilinear(img, np.zeros((8, 9)), np.zeros((8, 9)))
        with pytest.raises(ShapeError):
            warp_bilinear(img, np.zeros((8, 8)), np.zeros((4, 8)))


class TestResizeBilinear:
    def test_same_shape_is_identity(self):
        img = textured(9, 13)
        assert np.allclose(resize_bilinear(img, (9, 13)), img, atol=1e-12)

    def test_constant_preserved_at_any_shape(self):
        img = np.full((16, 16), 0.37)
        for shape in [(8, 8), (5, 11), (31, 3)]:
            assert np.allclose(resize_bilinear(img, shape), 0.37, atol=1e-12)

    def test_value_range_never_expands(self):
        img = textured(17, 23, seed=5)
        out = resize_bilinear(img, (40, 11))
        assert out.min() >= img.min() - 1e-12
        assert out.max() <= img.max() + 1e-12

    def test_downscale_then_upscale_roughly_recovers_smooth_image(self):
        yy, xx = np.mgrid[0:32, 0:32]
        img = 0.5 + 0.3 * np.sin(xx / 6.0) * np.cos(yy / 7.0)
        back = resize_bilinear(resize_bilinear(img, (16, 16)), (32, 32))
        assert np.abs(back - img).max() < 0.05

    def test_degenerate_target_rejected(self):
        with pytest.raises(ShapeError):
            resize_bilinear(textured(8, 8), (0, 8))


class TestPyramid:
    def test_single_level_returns_original(self):
        img = textured(20, 20)
        pyr = build_pyramid(img, 0.8, 1)
        assert len(pyr) == 1
        assert np.array_equal(pyr[0], img)

    def test_halving_pyramid_hits_floor(self):
        # 32 -> 16 -> 8 at scale 0.5; the 8px floor stops a fourth level.
        assert pyramid_level_count((32, 32), 0.5) == 3
        pyr = build_pyramid(textured(32, 32), 0.5, 3)
        assert [p.shape for p in pyr] == [(8, 8), (16, 16), (32, 32)]

    def test_level_dims_follow_scale_power(self):
        pyr = build_pyramid(textured(64, 48), 0.7, 4)
        expected = [(round(64 * 0.7 ** l), round(48 * 0.7 ** l))
                    for l in (3, 2, 1, 0)]
        assert [p.shape for p in pyr] == expected

    def test_constant_image_stays_constant_on_every_level(self):
        pyr = build_pyramid(np.full((40, 40), 0.6), 0.8, 5)
        for level in pyr:
            assert np.allclose(level, 0.6, atol=1e-12)

    def test_auto_level_count_respects_floor(self):
        n = pyramid_level_count((64, 64), 0.8)
        assert round(64 * 0.8 ** (n - 1)) >= MIN_LEVEL_DIM
        assert round(64 * 0.8 ** n) < MIN_LEVEL_DIM

    def test_explicit_levels_validated_against_floor(self):
        assert pyramid_level_count((64, 64), 0.5, 4) == 4
        with pytest.raises(ConfigError):
            pyramid_level_count((64, 64), 0.5, 5)
        with pytest.raises(ConfigError):
            pyramid_level_count((64, 64), 0.5, 0)

    def test_scale_range_enforced(self):
        img = textured(16, 16)
        build_pyramid(img, 0.5, 2)  # inclusive lower bound
        with pytest.raises(ConfigError):
            build_pyramid(img, 0.49, 2)
        with pytest.raises(ConfigError):
            build_pyramid(img, 0.95, 2)


class TestDerivatives:
    def test_exact_on_linear_ramp_interior(self):
        ramp = np.tile(np.arange(20, dtype=np.float64), (8, 1))
        dx = deriv_x(ramp)
        assert np.allclose(dx[:, 2:-2], 1.0, atol=1e-12)
        assert np.allclose(deriv_y(ramp), 0.0, atol=1e-12)

    def test_exact_on_cubic_interior(self):
        # The 5-tap stencil is 4th order: exact through cubic polynomials.
        x = np.arange(24, dtype=np.float64)
        img = np.tile(x ** 3 - 2 * x ** 2, (6, 1))
        dx = deriv_x(img)
        assert np.allclose(dx[:, 2:-2], (3 * x ** 2 - 4 * x)[2:-2], atol=1e-9)

    def test_constant_image_has_zero_derivative(self):
        img = np.full((10, 10), 3.3)
        assert np.all(deriv_x(img) == 0)
        assert np.all(deriv_y(img) == 0)

    def test_axes_are_independent(self):
        col = np.tile(np.arange(12, dtype=np.float64)[:, None], (1, 9))
        assert np.allclose(deriv_x(col), 0.0, atol=1e-12)
        assert np.allclose(deriv_y(col)[2:-2, :], 1.0, atol=1e-12)
