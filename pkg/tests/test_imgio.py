"""Tests for image containers and raster file I/O."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from scenebp.imgio import (
    Image,
    bias_gain_normalize,
    load_image,
    load_label_map,
    load_pfm,
    luminance,
    save_image,
    save_label_map,
    save_pfm,
)


class TestImageType:
    def test_two_dim_input_gets_channel_axis(self):
        img = Image(np.zeros((4, 5)))
        assert img.data.shape == (4, 5, 1)
        assert (img.height, img.width, img.channels) == (4, 5, 1)

    def test_invalid_channel_count_rejected(self):
        with pytest.raises(ValueError):
            Image(np.zeros((4, 5, 2)))

    def test_non_finite_rejected(self):
        bad = np.zeros((2, 2))
        bad[0, 0] = np.nan
        with pytest.raises(ValueError):
            Image(bad)

    def test_channel_moments(self):
        rng = np.random.default_rng(0)
        arr = rng.uniform(size=(6, 7, 3))
        img = Image(arr)
        assert np.allclose(img.channel_means(), arr.mean(axis=(0, 1)))
        assert np.allclose(img.channel_stds(), arr.std(axis=(0, 1)))


class TestLoadSave:
    def test_single_pixel_max_value(self, tmp_path):
        path = tmp_path / "one.pgm"
        path.write_bytes(b"P5\n1 1\n255\n\xff")
        img = load_image(path)
        assert img.data.shape == (1, 1, 1)
        assert img.data[0, 0, 0] == 1.0

    def test_color_ramp_fixture(self, tmp_path):
        # 2x2 PPM with samples 0,10,...,110: hand-computed floats k/255
        samples = bytes(range(0, 120, 10))
        path = tmp_path / "ramp.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + samples)
        img = load_image(path)
        expected = np.array([v / 255.0 for v in range(0, 120, 10)])
        assert np.array_equal(img.data.ravel(), expected)
        assert img.data.shape == (2, 2, 3)

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        arr = rng.integers(0, 256, size=(9, 4, 3)).astype(float) / 255.0
        p1 = tmp_path / "a.ppm"
        p2 = tmp_path / "b.ppm"
        save_image(Image(arr), p1)
        img = load_image(p1)
        assert np.array_equal(img.data, arr)
        save_image(img, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_grayscale_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        arr = rng.integers(0, 256, size=(5, 8)).astype(float) / 255.0
        path = tmp_path / "g.pgm"
        save_image(Image(arr), path)
        assert np.array_equal(load_image(path).data[:, :, 0], arr)

    def test_sixteen_bit_scaling(self, tmp_path):
        path = tmp_path / "deep.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n" + struct.pack(">H", 65535))
        assert load_image(path).data[0, 0, 0] == 1.0

    def test_header_comments_skipped(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n1 1\n# another\n255\n\x00")
        assert load_image(path).data[0, 0, 0] == 0.0

    @pytest.mark.parametrize("blob", [
        b"P4\n1 1\n255\n\x00",          # wrong magic
        b"P5\n1 1\n",                   # missing maxval
        b"P5\n1 1\n0\n\x00",            # maxval out of range
        b"P5\n1 1\n70000\n\x00\x00",    # maxval out of range
        b"P5\n2 2\n255\n\x00\x00",      # truncated raster
        b"P5\nx 1\n255\n\x00",          # non-numeric dimension
    ])
    def test_malformed_files_rejected(self, tmp_path, blob):
        path = tmp_path / "bad.pgm"
        path.write_bytes(blob)
        with pytest.raises(ValueError):
            load_image(path)


class TestBiasGain:
    def test_moments_are_zero_one(self):
        rng = np.random.default_rng(5)
        arr = 0.3 + 0.1 * rng.standard_normal((30, 20, 3))
        out = bias_gain_normalize(Image(arr))
        assert np.all(np.abs(out.channel_means()) < 1e-9)
        assert np.all(np.abs(out.channel_stds() - 1.0) < 1e-9)

    def test_idempotent_on_standardized_input(self):
        rng = np.random.default_rng(6)
        arr = rng.standard_normal((40, 25, 1))
        arr = (arr - arr.mean()) / arr.std()
        out = bias_gain_normalize(Image(arr))
        assert np.allclose(out.data, arr, atol=1e-9)

    def test_affine_intensity_invariance(self):
        rng = np.random.default_rng(7)
        arr = rng.uniform(size=(12, 9, 3))
        warped = 0.4 * arr + 0.2
        out_a = bias_gain_normalize(Image(arr))
        out_b = bias_gain_normalize(Image(warped))
        assert np.allclose(out_a.data, out_b.data, atol=1e-6)

    def test_constant_channel_rejected(self):
        arr = np.zeros((4, 4, 3))
        arr[:, :, 0] = np.random.default_rng(8).uniform(size=(4, 4))
        with pytest.raises(ValueError):
            bias_gain_normalize(Image(arr))


class TestLuminance:
    def test_grayscale_passthrough(self):
        arr = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(luminance(Image(arr)), arr)

    def test_color_weights(self):
        arr = np.zeros((1, 1, 3))
        arr[0, 0] = [1.0, 1.0, 1.0]
        assert np.isclose(luminance(Image(arr))[0, 0], 1.0)


class TestLabelMaps:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        labels = rng.integers(0, 65536, size=(7, 6))
        path = tmp_path / "labels.pgm"
        save_label_map(labels, path)
        assert np.array_equal(load_label_map(path), labels)

    def test_big_endian_samples(self, tmp_path):
        path = tmp_path / "one.pgm"
        save_label_map(np.array([[258]]), path)
        assert path.read_bytes().endswith(b"\x01\x02")

    def test_out_of_range_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_label_map(np.array([[70000]]), tmp_path / "x.pgm")
        with pytest.raises(ValueError):
            save_label_map(np.array([[-1]]), tmp_path / "x.pgm")

    def test_color_file_rejected(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(ValueError):
            load_label_map(path)


class TestPfm:
    def test_round_trip_grayscale(self, tmp_path):
        rng = np.random.default_rng(10)
        arr = rng.standard_normal((7, 5)).astype(np.float32)
        path = tmp_path / "d.pfm"
        save_pfm(arr, path)
        assert np.array_equal(load_pfm(path), arr.astype(float))

    def test_round_trip_color(self, tmp_path):
        rng = np.random.default_rng(11)
        arr = rng.standard_normal((4, 6, 3)).astype(np.float32)
        path = tmp_path / "c.pfm"
        save_pfm(arr, path)
        assert np.array_equal(load_pfm(path), arr.astype(float))

    def test_rows_stored_bottom_up(self, tmp_path):
        path = tmp_path / "two.pfm"
        path.write_bytes(b"Pf\n1 2\n-1.0\n" + struct.pack("<2f", 3.0, 7.0))
        arr = load_pfm(path)
        assert arr[0, 0] == 7.0 and arr[1, 0] == 3.0

    def test_header_fields(self, tmp_path):
        path = tmp_path / "h.pfm"
        save_pfm(np.zeros((2, 3), dtype=np.float32), path)
        assert path.read_bytes().startswith(b"Pf\n3 2\n-1.0\n")

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "t.pfm"
        path.write_bytes(b"Pf\n2 2\n-1.0\n" + struct.pack("<2f", 0.0, 0.0))
        with pytest.raises(ValueError):
            load_pfm(path)
