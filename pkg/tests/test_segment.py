"""Tests for graph-based over-segmentation and boundary extraction."""

from __future__ import annotations

import numpy as np
import pytest

from scenebp.imgio import Image, save_label_map
from scenebp.segment import (
    Segmentation,
    fh_segment,
    load_segmentation,
    save_segmentation,
)


def random_image(seed, height=32, width=48):
    rng = np.random.default_rng(seed)
    return Image(rng.uniform(size=(height, width, 3)))


# golden count recorded from the first verified run on random_image(42)
PINNED_SEGMENT_COUNT = 6


class TestFhSegment:
    def test_constant_image_single_superpixel(self):
        seg = fh_segment(Image(np.full((10, 12, 3), 0.5)))
        assert seg.n_segments == 1
        assert np.all(seg.labels == 0)
        assert seg.adjacency[0] == ()
        assert seg.boundaries == {}

    def test_two_half_planes(self):
        arr = np.zeros((20, 20, 3))
        arr[:, 10:] = 1.0
        seg = fh_segment(Image(arr), k=300.0, min_size=50)
        assert seg.n_segments == 2
        assert np.all(seg.labels[:, :10] == 0)
        assert np.all(seg.labels[:, 10:] == 1)
        pairs = seg.boundaries[(0, 1)]
        assert len(pairs) == 20
        assert np.all(pairs[:, 1] == 9)
        assert np.all(pairs[:, 3] == 10)
        assert np.array_equal(np.sort(pairs[:, 0]), np.arange(20))

    def test_small_component_absorbed(self):
        arr = np.zeros((12, 12, 3))
        arr[6, 6] = 1.0
        seg_loose = fh_segment(Image(arr), k=0.5, min_size=1)
        assert seg_loose.n_segments == 2
        seg = fh_segment(Image(arr), k=0.5, min_size=5)
        assert seg.n_segments == 1

    def test_deterministic_and_pinned_count(self):
        img = random_image(42)
        seg_a = fh_segment(img, k=300.0, min_size=50)
        seg_b = fh_segment(img, k=300.0, min_size=50)
        assert np.array_equal(seg_a.labels, seg_b.labels)
        # golden count recorded from the first verified run
        assert seg_a.n_segments == PINNED_SEGMENT_COUNT

    def test_non_positive_k_rejected(self):
        with pytest.raises(ValueError):
            fh_segment(random_image(0), k=0.0)

    def test_grayscale_accepted(self):
        arr = np.zeros((8, 8))
        arr[:, 4:] = 1.0
        seg = fh_segment(Image(arr), k=10.0, min_size=1)
        assert seg.n_segments == 2


class TestInvariants:
    def test_sizes_partition_image(self):
        seg = fh_segment(random_image(1), k=50.0, min_size=10)
        total = sum(len(px) for px in seg.superpixels)
        assert total == 32 * 48
        for i, px in enumerate(seg.superpixels):
            assert np.all(seg.labels[px[:, 0], px[:, 1]] == i)

    def test_every_differing_pair_in_exactly_one_boundary(self):
        rng = np.random.default_rng(2)
        raw = rng.integers(0, 4, size=(9, 11))
        _, dense = np.unique(raw, return_inverse=True)
        seg = Segmentation.from_labels(dense.reshape(9, 11))
        lab = seg.labels
        n_h = int(np.sum(lab[:, :-1] != lab[:, 1:]))
        n_v = int(np.sum(lab[:-1, :] != lab[1:, :]))
        listed = sum(len(v) for v in seg.boundaries.values())
        assert listed == n_h + n_v
        for (i, j), quad in seg.boundaries.items():
            assert i < j
            assert np.all(lab[quad[:, 0], quad[:, 1]] == i)
            assert np.all(lab[quad[:, 2], quad[:, 3]] == j)

    def test_boundary_mirror_symmetry(self):
        arr = np.zeros((6, 6, 3))
        arr[:, 3:] = 1.0
        seg = fh_segment(Image(arr), k=1.0, min_size=1)
        fwd = seg.boundary_pairs(0, 1)
        bwd = seg.boundary_pairs(1, 0)
        assert np.array_equal(fwd[:, [2, 3, 0, 1]], bwd)

    def test_adjacency_symmetric(self):
        seg = fh_segment(random_image(3), k=50.0, min_size=10)
        for i, neigh in seg.adjacency.items():
            assert neigh == tuple(sorted(neigh))
            for j in neigh:
                assert i in seg.adjacency[j]


class TestLabelIo:
    def test_all_zero_label_file(self, tmp_path):
        path = tmp_path / "z.pgm"
        save_label_map(np.zeros((5, 5), dtype=int), path)
        seg = load_segmentation(path)
        assert seg.n_segments == 1

    def test_stripe_labels_form_path_graph(self, tmp_path):
        labels = np.repeat(np.arange(3), 2)[None, :].repeat(4, axis=0)
        path = tmp_path / "s.pgm"
        save_label_map(labels, path)
        seg = load_segmentation(path)
        assert seg.adjacency == {0: (1,), 1: (0, 2), 2: (1,)}

    def test_round_trip_preserves_structure(self, tmp_path):
        seg = fh_segment(random_image(4), k=100.0, min_size=20)
        path = tmp_path / "seg.pgm"
        save_segmentation(seg, path)
        back = load_segmentation(path)
        assert np.array_equal(back.labels, seg.labels)
        assert back.adjacency == seg.adjacency
        assert set(back.boundaries) == set(seg.boundaries)
        for key, quad in seg.boundaries.items():
            assert np.array_equal(back.boundaries[key], quad)

    def test_non_dense_labels_relabeled_with_warning(self, tmp_path):
        labels = np.array([[5, 5, 9], [5, 5, 9]])
        path = tmp_path / "nd.pgm"
        save_label_map(labels, path)
        with pytest.warns(UserWarning):
            seg = load_segmentation(path)
        assert seg.n_segments == 2
        assert np.array_equal(seg.labels, np.array([[0, 0, 1], [0, 0, 1]]))
