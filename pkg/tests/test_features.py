"""Tests for pixel features, oriented-gradient histograms, and the
multi-scale filter bank."""

from __future__ import annotations

import numpy as np
import pytest

from scenebp.features import (
    EDGE_KERNELS,
    LAWS_MASKS,
    hog_pyramid,
    monocular_features,
    orientation_histogram,
    pixel_features,
)
from scenebp.imgio import Image, luminance


def naive_hog(image, cell_sizes=(8, 16, 32), n_bins=8):
    """Loop-based per-cell histogram oracle."""
    lum = luminance(image)
    height, width = lum.shape
    p = np.pad(lum, 1, mode="edge")
    mag = np.zeros((height, width))
    bidx = np.zeros((height, width), dtype=int)
    for r in range(height):
        for c in range(width):
            gx = (p[r + 1, c + 2] - p[r + 1, c]) / 2.0
            gy = (p[r + 2, c + 1] - p[r, c + 1]) / 2.0
            mag[r, c] = np.hypot(gx, gy)
            ang = np.mod(np.arctan2(gy, gx) + np.pi / 2, np.pi)
            bidx[r, c] = min(int(ang / np.pi * n_bins), n_bins - 1)
    out = np.zeros((height, width, n_bins * len(cell_sizes)))
    for k, size in enumerate(cell_sizes):
        for r0 in range(0, height, size):
            for c0 in range(0, width, size):
                hist = np.zeros(n_bins)
                for r in range(r0, min(r0 + size, height)):
                    for c in range(c0, min(c0 + size, width)):
                        hist[bidx[r, c]] += mag[r, c]
                total = hist.sum()
                if total > 0:
                    hist = hist / total
                out[r0:r0 + size, c0:c0 + size,
                    k * n_bins:(k + 1) * n_bins] = hist
    return out


class TestPixelFeatures:
    def test_constant_image(self):
        img = Image(np.full((6, 8, 3), 0.3))
        feats = pixel_features(img)
        assert feats.shape == (6, 8, 9)
        assert np.allclose(feats[:, :, :3], 0.3)
        assert np.allclose(feats[:, :, 3:], 0.0)

    def test_horizontal_ramp_gradients(self):
        # analytic derivative: slope k along x, zero along y
        k = 0.75
        cols = k * np.arange(9.0)
        img = Image(np.broadcast_to(cols, (7, 9)).copy())
        feats = pixel_features(img)
        assert np.allclose(feats[:, 1:-1, 3:6], k)
        assert np.allclose(feats[:, :, 6:9], 0.0)
        # replicate padding halves the border x-gradient
        assert np.allclose(feats[:, 0, 3:6], k / 2)

    def test_grayscale_replicated(self):
        rng = np.random.default_rng(0)
        arr = rng.uniform(size=(5, 6))
        feats = pixel_features(Image(arr))
        assert feats.shape == (5, 6, 9)
        assert np.array_equal(feats[:, :, 0], feats[:, :, 1])
        assert np.array_equal(feats[:, :, 3], feats[:, :, 4])


class TestHogPyramid:
    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        img = Image(rng.uniform(size=(21, 37, 3)))
        fast = hog_pyramid(img)
        slow = naive_hog(img)
        assert fast.shape == slow.shape == (21, 37, 24)
        assert np.max(np.abs(fast - slow)) <= 1e-9

    def test_blocks_are_distributions(self):
        rng = np.random.default_rng(2)
        img = Image(rng.uniform(size=(40, 48, 3)))
        hog = hog_pyramid(img)
        assert np.all(hog >= 0)
        sums = hog.reshape(40, 48, 3, 8).sum(axis=3)
        nonzero = sums > 0
        assert np.all(np.abs(sums[nonzero] - 1.0) <= 1e-9)

    def test_vertical_step_edge_hits_90_degree_bin(self):
        arr = np.zeros((64, 64))
        arr[:, 32:] = 1.0
        hog = hog_pyramid(Image(arr))
        blocks = hog.reshape(64, 64, 3, 8)
        sums = blocks.sum(axis=3)
        # every cell containing the edge puts all mass in bin 4 (90 deg)
        assert np.any(sums > 0)
        assert np.allclose(blocks[sums > 0][:, 4], 1.0)

    def test_zero_gradient_image_all_zero(self):
        hog = hog_pyramid(Image(np.full((16, 16), 0.5)))
        assert np.all(hog == 0.0)

    def test_rotation_permutes_bins_by_four(self):
        # oriented stripes; 90 degree rotation shifts edge orientation by
        # 4 of the 8 bins
        size = 64
        ys, xs = np.mgrid[0:size, 0:size].astype(float)
        phi = np.deg2rad(30.0)
        stripes = np.sin(2 * np.pi * (xs * np.cos(phi) + ys * np.sin(phi)) / 8.0)
        a = hog_pyramid(Image(stripes))
        b = hog_pyramid(Image(np.rot90(stripes)))
        ii, jj = np.mgrid[0:size, 0:size]
        mapped = a[jj, size - 1 - ii].reshape(size, size, 3, 8)
        rolled = np.roll(mapped, 4, axis=3).reshape(size, size, 24)
        assert np.allclose(b, rolled, atol=1e-9)


class TestOrientationHistogram:
    def test_step_edge_mass_in_90_bin(self):
        arr = np.zeros((32, 32))
        arr[:, 16:] = 1.0
        hist = orientation_histogram(Image(arr), n_bins=36)
        assert hist.shape == (36,)
        assert np.isclose(hist[18], 1.0)

    def test_smoothing_preserves_total(self):
        rng = np.random.default_rng(3)
        img = Image(rng.uniform(size=(20, 20)))
        hist = orientation_histogram(img, n_bins=36, smooth_sigma=2.0)
        assert np.isclose(hist.sum(), 1.0)
        assert np.all(hist >= 0)

    def test_constant_image_is_zero(self):
        hist = orientation_histogram(Image(np.ones((8, 8))))
        assert np.all(hist == 0.0)


class TestMonocularFeatures:
    def test_filter_bank_shapes(self):
        assert len(LAWS_MASKS) == 9
        assert all(m.shape == (3, 3) for m in LAWS_MASKS)
        assert len(EDGE_KERNELS) == 6
        assert all(np.isclose(k.sum(), 0.0) for k in EDGE_KERNELS)

    def test_constant_image(self):
        img = Image(np.full((40, 44), 0.6))
        feats, levels = monocular_features(img)
        assert feats.shape == (40, 44, 48)
        assert np.allclose(feats[:, :, :45], 0.0)
        xn = feats[:, :, 45]
        yn = feats[:, :, 46]
        assert np.allclose(xn[0], np.arange(44) / 43.0)
        assert np.allclose(yn[:, 0], np.arange(40) / 39.0)
        assert np.all(feats[:, :, 47] == 1.0)
        assert levels.shape == (40, 44)

    def test_color_dimensions_and_zero_energies(self):
        arr = np.zeros((40, 40, 3))
        arr[:, :, 0] = 0.9
        arr[:, :, 1] = 0.1
        feats, _ = monocular_features(Image(arr))
        assert feats.shape == (40, 40, 54)
        for block in range(3):
            start = 17 * block
            assert np.allclose(feats[:, :, start:start + 15], 0.0)
        assert np.all(feats[:, :, 53] == 1.0)

    def test_height_level_binning(self):
        img = Image(np.zeros((40, 5)))
        _, levels = monocular_features(img)
        assert levels[0, 0] == 0
        assert levels[39, 0] == 39
        img80 = Image(np.zeros((80, 5)))
        _, levels80 = monocular_features(img80)
        assert levels80[79, 0] == 39
        assert levels80[1, 0] == 0

    def test_short_image_rejected(self):
        with pytest.raises(ValueError):
            monocular_features(Image(np.zeros((39, 50))))

    def test_checkerboard_high_frequency_dominates(self):
        # +/-1 checkerboard: spot-spot mask responds strongly, the
        # low-pass level-level mask cancels
        ys, xs = np.mgrid[0:48, 0:48]
        board = np.where((xs + ys) % 2 == 0, 1.0, -1.0)
        feats, _ = monocular_features(Image(board))
        low = np.abs(feats[4:-4, 4:-4, 0]).mean()
        high = np.abs(feats[4:-4, 4:-4, 8]).mean()
        assert high > 10.0 * max(low, 1e-12)
        assert high > 1.0
