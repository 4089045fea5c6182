import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.labelmap import (
    binary_mask,
    boundary_distance,
    connected_components,
    foreground,
    instance_count,
    iou,
    partitions_equal,
    read_image,
    read_labels,
    relabel_sequential,
    write_image,
    write_labels,
)


class TestRelabel:
    def test_first_occurrence_order(self):
        labels = np.array([[0, 7, 7], [3, 0, 9]])
        assert_array_equal(relabel_sequential(labels), [[0, 1, 1], [2, 0, 3]])

    def test_empty_map(self):
        assert_array_equal(relabel_sequential(np.zeros((2, 2), dtype=int)), 0)

    def test_idempotent(self, rng):
        labels = rng.integers(0, 6, size=(10, 10))
        once = relabel_sequential(labels)
        assert_array_equal(relabel_sequential(once), once)


class TestComponents:
    def test_diagonal_pixels_are_separate(self):
        mask = np.array([[1, 0], [0, 1]], dtype=bool)
        assert_array_equal(connected_components(mask), [[1, 0], [0, 2]])

    def test_raster_order(self):
        mask = np.array([[0, 0, 1], [1, 0, 1], [1, 0, 0]], dtype=bool)
        assert_array_equal(connected_components(mask), [[0, 0, 1], [2, 0, 1], [2, 0, 0]])


class TestMasks:
    def test_binary_mask_rejects_background(self):
        with pytest.raises(ValueError):
            binary_mask(np.zeros((2, 2), dtype=int), 0)

    def test_iou(self):
        a = np.array([1, 1, 0, 0], dtype=bool)
        b = np.array([0, 1, 1, 0], dtype=bool)
        assert iou(a, b) == pytest.approx(1 / 3)
        assert iou(np.zeros(3, bool), np.zeros(3, bool)) == 0.0

    def test_iou_shape_mismatch(self):
        with pytest.raises(ValueError):
            iou(np.zeros(3, bool), np.zeros(4, bool))

    def test_counts(self):
        labels = np.array([[0, 4], [4, 2]])
        assert instance_count(labels) == 2
        assert_array_equal(foreground(labels), [[False, True], [True, True]])


class TestBoundaryDistance:
    def test_background_is_zero_and_peak_is_one(self):
        labels = np.zeros((11, 11), dtype=int)
        labels[2:9, 2:9] = 1
        dist = boundary_distance(labels)
        assert dist[labels == 0].max() == 0.0
        assert dist.max() == pytest.approx(1.0)
        assert dist[5, 5] == pytest.approx(1.0)
        assert dist[2, 5] < dist[3, 5] < dist[5, 5]

    def test_square_border_half_center_one(self):
        labels = np.zeros((7, 7), dtype=int)
        labels[2:5, 2:5] = 1
        dist = boundary_distance(labels)
        expected = np.zeros((7, 7))
        expected[2:5, 2:5] = 0.5
        expected[3, 3] = 1.0
        assert_allclose(dist, expected)

    def test_touching_instances_have_low_values_at_contact(self):
        labels = np.zeros((5, 10), dtype=int)
        labels[:, :5] = 1
        labels[:, 5:] = 2
        dist = boundary_distance(labels)
        assert dist[2, 4] < dist[2, 2]
        assert dist[2, 5] < dist[2, 7]

    def test_image_border_counts_as_boundary(self):
        labels = np.ones((5, 5), dtype=int)
        dist = boundary_distance(labels)
        assert dist[0, 2] < dist[2, 2] == pytest.approx(1.0)

    def test_each_instance_normalised_separately(self):
        labels = np.zeros((20, 30), dtype=int)
        labels[2:18, 2:18] = 1
        labels[5:8, 22:25] = 2
        dist = boundary_distance(labels)
        assert dist[labels == 1].max() == pytest.approx(1.0)
        assert dist[labels == 2].max() == pytest.approx(1.0)

    def test_empty(self):
        assert_array_equal(boundary_distance(np.zeros((3, 3), dtype=int)), 0.0)


class TestPartitions:
    def test_equal_up_to_permutation(self):
        a = np.array([[1, 1, 0], [2, 2, 0]])
        b = np.array([[5, 5, 0], [3, 3, 0]])
        assert partitions_equal(a, b)

    def test_split_instance_differs(self):
        a = np.array([[1, 1, 1]])
        b = np.array([[1, 2, 2]])
        assert not partitions_equal(a, b)
        assert not partitions_equal(b, a)

    def test_foreground_differs(self):
        assert not partitions_equal(np.array([[1, 0]]), np.array([[1, 1]]))


class TestIO:
    def test_labels_round_trip_16_bit(self, tmp_path):
        labels = np.array([[0, 1], [300, 65535]], dtype=np.int32)
        path = write_labels(tmp_path / "l.png", labels)
        assert_array_equal(read_labels(path), labels)

    def test_labels_out_of_range(self, tmp_path):
        with pytest.raises(ValueError):
            write_labels(tmp_path / "l.png", np.array([[70000]]))

    @pytest.mark.parametrize("channels", [1, 3])
    def test_image_round_trip_8_bit(self, tmp_path, rng, channels):
        image = rng.uniform(size=(channels, 6, 5))
        back = read_image(write_image(tmp_path / "i.png", image))
        assert back.shape == image.shape
        assert_allclose(back, np.rint(image * 255) / 255)
