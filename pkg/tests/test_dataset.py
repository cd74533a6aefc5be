"""Tests for file formats and manifests.

The cube-container byte layout is checked against a hand-packed oracle for
a tiny cube; round-trip tests then cover random instances.
"""

import struct

import numpy as np
import pytest

from hsibench.core import CameraResponse, HsiCube, Rgb8Image, RgbImage, WavelengthGrid
from hsibench import dataset as ds


def random_f32_cube(rng, bands=None, h=None, w=None):
    """A random cube whose samples are exactly float32-representable."""
    bands = bands or int(rng.integers(1, 9))
    h = h or int(rng.integers(1, 7))
    w = w or int(rng.integers(1, 7))
    data = rng.uniform(0.0, 2.0, size=(bands, h, w)).astype(np.float32).astype(np.float64)
    return HsiCube(data, WavelengthGrid(400.0, 10.0, bands))


class TestCubeContainer:
    def test_byte_layout_matches_hand_packed_oracle(self):
        # 2 bands, 1x2 pixels; oracle packed independently of the writer
        data = np.array([[[0.5, 1.5]], [[2.0, 0.25]]])
        cube = HsiCube(data, WavelengthGrid(400.0, 10.0, 2))
        expect = struct.pack("<4sHIIH", b"BHSC", 1, 1, 2, 2)
        expect += struct.pack("<2f", 400.0, 410.0)
        expect += struct.pack("<4f", 0.5, 1.5, 2.0, 0.25)  # band 0 row-major, then band 1
        assert ds.cube_to_bytes(cube) == expect

    def test_roundtrip_random_cubes(self, tmp_path):
        rng = np.random.default_rng(7)
        for i in range(25):
            cube = random_f32_cube(rng)
            path = tmp_path / f"c{i}.bhsc"
            ds.write_cube(cube, path)
            back = ds.read_cube(path)
            assert back.grid == cube.grid
            np.testing.assert_array_equal(back.data, cube.data)
            # writing the read-back cube reproduces identical bytes
            assert ds.cube_to_bytes(back) == path.read_bytes()

    def test_bad_magic(self):
        blob = bytearray(ds.cube_to_bytes(random_f32_cube(np.random.default_rng(0))))
        blob[:4] = b"NOPE"
        with pytest.raises(ds.FormatError, match="magic"):
            ds.cube_from_bytes(bytes(blob))

    def test_bad_version(self):
        blob = bytearray(ds.cube_to_bytes(random_f32_cube(np.random.default_rng(1))))
        blob[4:6] = struct.pack("<H", 9)
        with pytest.raises(ds.FormatError, match="version"):
            ds.cube_from_bytes(bytes(blob))

    def test_truncation(self):
        blob = ds.cube_to_bytes(random_f32_cube(np.random.default_rng(2)))
        with pytest.raises(ds.FormatError, match="truncated"):
            ds.cube_from_bytes(blob[:-3])
        with pytest.raises(ds.FormatError, match="truncated"):
            ds.cube_from_bytes(blob[:6])

    def test_zero_dimension_header(self):
        head = struct.pack("<4sHIIH", b"BHSC", 1, 0, 4, 2)
        with pytest.raises(ds.FormatError, match="height"):
            ds.cube_from_bytes(head + b"\x00" * 64)

    def test_nonuniform_wavelengths_rejected(self):
        head = struct.pack("<4sHIIH", b"BHSC", 1, 1, 1, 3)
        waves = struct.pack("<3f", 400.0, 410.0, 435.0)
        samples = struct.pack("<3f", 1.0, 1.0, 1.0)
        with pytest.raises(ds.FormatError, match="uniform"):
            ds.cube_from_bytes(head + waves + samples)

    def test_read_names_file_in_error(self, tmp_path):
        p = tmp_path / "bad.bhsc"
        p.write_bytes(b"JUNKJUNK")
        with pytest.raises(ds.FormatError, match="bad.bhsc"):
            ds.read_cube(p)


class TestCssCsv:
    def make_css(self):
        rng = np.random.default_rng(3)
        m = rng.uniform(0.0, 1.0, size=(3, 6))
        return CameraResponse(m, WavelengthGrid(400.0, 10.0, 6))

    def test_roundtrip_full_precision(self, tmp_path):
        css = self.make_css()
        path = tmp_path / "css.csv"
        ds.write_css(css, path)
        back = ds.read_css(path)
        assert back.grid == css.grid
        np.testing.assert_array_equal(back.matrix, css.matrix)

    def test_header_and_column_errors(self):
        with pytest.raises(ds.FormatError, match="header"):
            ds.css_from_text("nm,r,g,b\n400,1,0,0\n")
        with pytest.raises(ds.FormatError, match="columns"):
            ds.css_from_text("wavelength,r,g,b\n400,1,0\n")
        with pytest.raises(ds.FormatError, match="non-numeric"):
            ds.css_from_text("wavelength,r,g,b\n400,1,x,0\n")

    def test_monotonicity_and_uniformity(self):
        body = "wavelength,r,g,b\n400,1,0,0\n390,0,1,0\n420,0,0,1\n"
        with pytest.raises(ds.FormatError, match="ascending"):
            ds.css_from_text(body)
        body = "wavelength,r,g,b\n400,1,0,0\n410,0,1,0\n435,0,0,1\n"
        with pytest.raises(ds.FormatError, match="uniform"):
            ds.css_from_text(body)

    def test_duplicate_green_row_hits_rank_check(self):
        rows = ["wavelength,r,g,b"]
        vals = np.random.default_rng(4).uniform(0.1, 1.0, size=4)
        for i, v in enumerate(vals):
            rows.append(f"{400 + 10 * i},{v},{v},{v * 0.5}")  # g duplicates r
        with pytest.raises(ValueError, match="rank"):
            ds.css_from_text("\n".join(rows) + "\n")


class TestImageCodecs:
    def test_png_roundtrip_sample_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        img = Rgb8Image(rng.integers(0, 256, size=(10, 14, 3), dtype=np.uint8), 1.25)
        path = tmp_path / "x.png"
        ds.write_png(img, path)
        back = ds.read_rgb8(path, white_level=1.25)
        np.testing.assert_array_equal(back.data, img.data)
        assert back.white_level == 1.25

    def test_jpeg_quality_validation(self):
        img = Rgb8Image(np.zeros((8, 8, 3), dtype=np.uint8))
        with pytest.raises(ValueError):
            ds.encode_jpeg(img, quality=0)
        with pytest.raises(ValueError):
            ds.encode_jpeg(img, quality=101)
        with pytest.raises(ValueError):
            ds.encode_jpeg(img, subsampling="4:1:1")

    def test_jpeg_encode_is_deterministic(self):
        rng = np.random.default_rng(6)
        img = Rgb8Image(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
        assert ds.encode_jpeg(img, 95) == ds.encode_jpeg(img, 95)

    def test_jpeg_constant_patch_nearly_exact(self):
        """Flat 8x8 patches survive JPEG within 2 codes at quality 95
        (measured: gray is exact, saturated colors deviate by at most 1)."""
        for color in [(128, 128, 128), (255, 0, 0), (10, 200, 60)]:
            img = Rgb8Image(np.full((8, 8, 3), color, dtype=np.uint8))
            back = ds.decode_jpeg(ds.encode_jpeg(img, 95))
            dev = np.abs(back.data.astype(int) - img.data.astype(int)).max()
            assert dev <= 2

    def test_jpeg_decode_carries_white_level(self):
        img = Rgb8Image(np.full((8, 8, 3), 100, dtype=np.uint8))
        back = ds.decode_jpeg(ds.encode_jpeg(img, 95), white_level=3.0)
        assert back.white_level == 3.0

    def test_float_rgb_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        img = RgbImage(rng.uniform(0, 5, size=(6, 7, 3)))
        path = tmp_path / "x.npy"
        ds.write_rgb_float(img, path)
        np.testing.assert_array_equal(ds.read_rgb_float(path).data, img.data)


class TestManifest:
    def write_lines(self, tmp_path, lines):
        p = tmp_path / "scenes.jsonl"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return p

    def test_load_filter_and_resolve(self, tmp_path):
        (tmp_path / "a.bhsc").write_bytes(b"")
        (tmp_path / "b.bhsc").write_bytes(b"")
        p = self.write_lines(
            tmp_path,
            [
                "# comment line",
                '{"id": "a", "cube": "a.bhsc", "tags": ["train"]}',
                '{"id": "b", "cube": "b.bhsc", "tags": ["test", "out_of_scope"]}',
            ],
        )
        m = ds.load_manifest(p)
        assert m.ids() == ["a", "b"]
        assert m.resolve("a.bhsc") == tmp_path / "a.bhsc"
        assert ds.load_manifest(p).filter_by_tag("out_of_scope").ids() == ["b"]
        assert m.filter_by_tag("nope").ids() == []

    def test_collects_all_errors(self, tmp_path):
        p = self.write_lines(
            tmp_path,
            [
                '{"id": "a", "cube": "missing.bhsc"}',
                '{"id": "a", "cube": "other.bhsc"}',
                '{"cube": "x.bhsc"}',
                '{"id": "c"}',
            ],
        )
        with pytest.raises(ds.ManifestError) as err:
            ds.load_manifest(p)
        msgs = "\n".join(err.value.errors)
        assert len(err.value.errors) == 4
        assert "not found" in msgs
        assert "duplicate id" in msgs
        assert "missing or empty 'id'" in msgs
        assert "needs a cube path or an rgb path" in msgs

    def test_save_load_roundtrip_with_comment(self, tmp_path):
        (tmp_path / "a.bhsc").write_bytes(b"")
        m = ds.Manifest(
            tmp_path, (ds.SceneRecord("a", cube="a.bhsc", tags=("z", "a", "z")),)
        )
        out = tmp_path / "out.jsonl"
        ds.save_manifest(m, out, comment="config_hash=deadbeef")
        assert out.read_text().startswith("# config_hash=deadbeef")
        back = ds.load_manifest(out)
        assert back.scenes[0].id == "a"
        assert back.scenes[0].tags == ("a", "z")  # sorted and deduplicated
