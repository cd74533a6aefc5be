"""Tests for the camera simulation stages.

Derived expectations are checked against independent scalar-loop oracles
(per-pixel dot products for projection, an explicit kernel-table loop with
reflected indexing for demosaicing) rather than against the vectorized
implementations under test.
"""

import numpy as np
import pytest

from hsibench import camera
from hsibench.core import CameraResponse, HsiCube, RgbImage, WavelengthGrid


def random_css(rng, bands=31):
    return CameraResponse(rng.uniform(0.0, 1.0, size=(3, bands)), WavelengthGrid(400.0, 10.0, bands))


def random_cube(rng, bands=31, h=2, w=2):
    return HsiCube(rng.uniform(0.0, 1.0, size=(bands, h, w)), WavelengthGrid(400.0, 10.0, bands))


def project_oracle(cube, css):
    """Scalar triple-loop projection oracle."""
    out = np.zeros((cube.height, cube.width, 3))
    for r in range(cube.height):
        for c in range(cube.width):
            for ch in range(3):
                acc = 0.0
                for b in range(cube.bands):
                    acc += css.matrix[ch, b] * cube.data[b, r, c]
                out[r, c, ch] = acc
    return out


class TestProjectClean:
    def test_indicator_row_picks_single_band(self):
        m = np.zeros((3, 31))
        m[0, 15] = 1.0
        m[1, 10] = 1.0
        m[2, 5] = 1.0
        css = CameraResponse(m)
        data = np.zeros((31, 1, 1))
        data[15, 0, 0] = 0.7
        rgb = camera.project_clean(HsiCube(data), css)
        assert rgb.data[0, 0, 0] == 0.7
        assert rgb.data[0, 0, 1] == 0.0

    def test_flat_spectrum_gives_row_sums(self):
        rng = np.random.default_rng(0)
        css = random_css(rng)
        v = 0.3
        cube = HsiCube(np.full((31, 2, 2), v))
        rgb = camera.project_clean(cube, css)
        expect = np.broadcast_to(v * css.matrix.sum(axis=1), (2, 2, 3))
        np.testing.assert_allclose(rgb.data, expect, rtol=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        cube, css = random_cube(rng), random_css(rng)
        got = camera.project_clean(cube, css).data
        want = project_oracle(cube, css)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=0)

    def test_grid_mismatch(self):
        rng = np.random.default_rng(2)
        cube = random_cube(rng, bands=31)
        css = random_css(rng, bands=16)
        with pytest.raises(ValueError, match="grid"):
            camera.project_clean(cube, css)


class TestMosaic:
    def test_constant_image(self):
        img = RgbImage(np.broadcast_to(np.array([0.2, 0.5, 0.8]), (4, 4, 3)).copy())
        m = camera.mosaic_rggb(img)
        assert np.all(m.data[0::2, 0::2] == 0.2)
        assert np.all(m.data[0::2, 1::2] == 0.5)
        assert np.all(m.data[1::2, 0::2] == 0.5)
        assert np.all(m.data[1::2, 1::2] == 0.8)

    def test_two_by_two_definition(self):
        data = np.zeros((2, 2, 3))
        data[..., 0] = 1.0
        data[..., 1] = 2.0
        data[..., 2] = 3.0
        m = camera.mosaic_rggb(RgbImage(data))
        np.testing.assert_array_equal(m.data, [[1.0, 2.0], [2.0, 3.0]])

    def test_odd_dimension_rejected(self):
        with pytest.raises(ValueError):
            camera.mosaic_rggb(RgbImage(np.zeros((3, 4, 3))))
        with pytest.raises(ValueError):
            camera.mosaic_rggb(RgbImage(np.zeros((4, 5, 3))))


class TestSensorNoise:
    def test_noiseless_identity(self):
        rng = np.random.default_rng(3)
        m = camera.BayerMosaic(rng.uniform(0, 1, size=(6, 6)))
        out = camera.add_sensor_noise(m, camera.NoiseParams(0.0, 0.0, seed=1))
        np.testing.assert_array_equal(out.data, m.data)

    def test_same_seed_identical(self):
        rng = np.random.default_rng(4)
        m = camera.BayerMosaic(rng.uniform(0, 1, size=(8, 8)))
        p = camera.NoiseParams(500.0, 0.01, seed=42)
        a = camera.add_sensor_noise(m, p)
        b = camera.add_sensor_noise(m, p)
        np.testing.assert_array_equal(a.data, b.data)
        c = camera.add_sensor_noise(m, camera.NoiseParams(500.0, 0.01, seed=43))
        assert not np.array_equal(a.data, c.data)

    def test_negative_input_rejected(self):
        m = camera.BayerMosaic(np.full((2, 2), 0.5))
        object.__setattr__(m, "data", np.array([[0.5, -0.1], [0.2, 0.3]]))
        with pytest.raises(ValueError, match="nonnegative"):
            camera.add_sensor_noise(m, camera.NoiseParams())

    def test_shot_noise_moments(self):
        # constant plane at 1.0; counts ~ Poisson(1000) per site
        n_side = (500, 400)
        m = camera.BayerMosaic(np.ones(n_side))
        out = camera.add_sensor_noise(m, camera.NoiseParams(1000.0, 0.0, seed=6))
        n = m.data.size
        se = np.sqrt(1.0 / (1000.0 * n))
        assert abs(out.data.mean() - 1.0) < 3 * se
        assert abs(out.data.var() - 1e-3) < 0.05e-3

    def test_dark_noise_moments(self):
        m = camera.BayerMosaic(np.ones((500, 400)))
        out = camera.add_sensor_noise(m, camera.NoiseParams(0.0, 0.01, seed=777))
        n = m.data.size
        assert abs(out.data.mean() - 1.0) < 3 * 0.01 / np.sqrt(n)
        assert abs(out.data.var() - 1e-4) < 0.05e-4

    def test_clamped_at_zero(self):
        m = camera.BayerMosaic(np.zeros((20, 20)))
        out = camera.add_sensor_noise(m, camera.NoiseParams(0.0, 0.5, seed=9))
        assert np.all(out.data >= 0)
        assert np.any(out.data == 0)  # roughly half the sites clamp


def demosaic_oracle(mosaic):
    """Independent per-pixel kernel-table oracle with reflected indexing."""
    h, w = mosaic.shape
    k_rb = [[1, 2, 1], [2, 4, 2], [1, 2, 1]]
    k_g = [[0, 1, 0], [1, 4, 1], [0, 1, 0]]

    def reflect(i, n):
        if i < 0:
            return -i
        if i >= n:
            return 2 * n - 2 - i
        return i

    def channel_at(r, c):
        if r % 2 == 0 and c % 2 == 0:
            return 0
        if r % 2 == 1 and c % 2 == 1:
            return 2
        return 1

    out = np.zeros((h, w, 3))
    for r in range(h):
        for c in range(w):
            for ch in range(3):
                kern = k_g if ch == 1 else k_rb
                acc = 0.0
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        if channel_at(r + dy, c + dx) == ch:
                            acc += kern[dy + 1][dx + 1] * mosaic[reflect(r + dy, h), reflect(c + dx, w)]
                out[r, c, ch] = acc / 4.0
    return out


class TestDemosaic:
    def test_constant_image_identity(self):
        img = RgbImage(np.broadcast_to(np.array([0.3, 0.6, 0.9]), (6, 8, 3)).copy())
        back = camera.demosaic_bilinear(camera.mosaic_rggb(img))
        np.testing.assert_array_equal(back.data, img.data)

    def test_interior_blue_site_green_is_mean_of_cross(self):
        rng = np.random.default_rng(5)
        m = camera.BayerMosaic(rng.uniform(0, 1, size=(8, 8)))
        out = camera.demosaic_bilinear(m)
        r, c = 3, 3  # odd-odd: a blue site away from the border
        expect = (m.data[2, 3] + m.data[4, 3] + m.data[3, 2] + m.data[3, 4]) / 4.0
        assert abs(out.data[r, c, 1] - expect) < 1e-12

    def test_matches_kernel_oracle(self):
        rng = np.random.default_rng(6)
        m = camera.BayerMosaic(rng.uniform(0, 1, size=(6, 10)))
        got = camera.demosaic_bilinear(m).data
        want = demosaic_oracle(m.data)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_horizontal_ramp_exact_in_interior(self):
        h, w = 6, 12
        ramp = np.broadcast_to(np.arange(w, dtype=np.float64), (h, w))
        img = np.zeros((h, w, 3))
        img[..., 0] = ramp
        img[..., 1] = 0.5
        img[..., 2] = 0.25
        out = camera.demosaic_bilinear(camera.mosaic_rggb(RgbImage(img)))
        np.testing.assert_allclose(out.data[:, 1:-1, 0], ramp[:, 1:-1], atol=1e-12)

    def test_dimensions_preserved(self):
        m = camera.BayerMosaic(np.zeros((4, 10)))
        out = camera.demosaic_bilinear(m)
        assert (out.height, out.width) == (4, 10)


class TestQuantize:
    def test_endpoints_and_half(self):
        img = RgbImage(np.array([[[2.0, 0.0, 1.0]]]))
        out = camera.quantize(img, white_level=2.0)
        np.testing.assert_array_equal(out.data[0, 0], [255, 0, 128])
        assert out.white_level == 2.0

    def test_clamps_out_of_range(self):
        img = RgbImage(np.array([[[5.0, -1.0, 0.5]]]))
        out = camera.quantize(img, white_level=1.0)
        np.testing.assert_array_equal(out.data[0, 0], [255, 0, 128])

    def test_invalid_white_level(self):
        img = RgbImage(np.zeros((1, 1, 3)))
        for bad in (0.0, -1.0, float("nan")):
            with pytest.raises(ValueError):
                camera.quantize(img, bad)


class TestComposedPipelines:
    def test_simulate_clean_is_projection(self):
        rng = np.random.default_rng(7)
        cube, css = random_cube(rng, h=4, w=4), random_css(rng)
        a = camera.simulate_clean(cube, css, white_level=1.0)
        b = camera.project_clean(cube, css)
        np.testing.assert_array_equal(a.data, b.data)

    def test_clean_linearity_one_ulp(self):
        from hsibench.core import scale_cube

        rng = np.random.default_rng(8)
        cube, css = random_cube(rng, h=4, w=6), random_css(rng)
        base = camera.simulate_clean(cube, css).data
        for k in (0.5, 2.0):
            scaled = camera.simulate_clean(scale_cube(cube, k), css).data
            assert np.all(np.abs(scaled - k * base) <= np.spacing(np.abs(k * base)))

    def test_real_world_constant_cube_close_to_clean_quantization(self):
        rng = np.random.default_rng(9)
        css = random_css(rng)
        cube = HsiCube(np.full((31, 8, 8), 0.04))
        quiet = camera.NoiseParams(0.0, 0.0, seed=0)
        wl = float(camera.project_clean(cube, css).data.max())
        got = camera.simulate_real_world(cube, css, quiet, quality=100, white_level=wl)
        want = camera.quantize(camera.project_clean(cube, css), wl)
        dev = np.abs(got.data.astype(int) - want.data.astype(int)).max()
        assert dev <= 2

    def test_real_world_bytes_deterministic(self):
        rng = np.random.default_rng(10)
        cube, css = random_cube(rng, h=8, w=8), random_css(rng)
        p = camera.NoiseParams(800.0, 0.005, seed=11)
        a = camera.real_world_jpeg(cube, css, p, white_level=10.0, quality=95)
        b = camera.real_world_jpeg(cube, css, p, white_level=10.0, quality=95)
        assert a == b


class TestWhiteLevel:
    def test_percentile_over_images(self):
        imgs = [RgbImage(np.full((2, 2, 3), v)) for v in (1.0, 2.0, 10.0)]
        level = camera.percentile_white_level(imgs, pct=50.0)
        assert level == 2.0

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            camera.percentile_white_level([])
