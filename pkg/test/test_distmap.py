import itertools
import unittest

import numpy as np

from dmrseg.distmap import *
from dmrseg.dataio import PhantomSpec, gen_phantom
from dmrseg.errors import LabelError


def brute_force_squared(targets):
    points = np.argwhere(targets)
    grid = np.indices(targets.shape).reshape(2, -1).T
    squared = ((grid[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
    return squared.min(axis=1).reshape(targets.shape)


def brute_force_dm(labels, class_id, threshold):
    mask = labels == class_id
    if not mask.any():
        return np.full(labels.shape, -float(threshold))
    distance = np.sqrt(brute_force_squared(boundary_mask(mask)))
    return np.where(mask, distance, -np.minimum(distance, threshold))


class TestBoundary(unittest.TestCase):

    def test_single_pixel(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 2] = True
        self.assertEqual(boundary_pixels(mask), {(2, 2)})

    def test_empty_mask(self):
        self.assertEqual(boundary_pixels(np.zeros((4, 4))), set())

    def test_full_slice_border(self):
        border = boundary_pixels(np.ones((3, 3)))
        self.assertEqual(len(border), 8)
        self.assertNotIn((1, 1), border)


class TestEDT(unittest.TestCase):

    def test_corner_distance(self):
        distance = edt(np.zeros((5, 5)), {(2, 2)})
        self.assertAlmostEqual(distance[0, 0], 2 * np.sqrt(2))
        self.assertEqual(distance[2, 2], 0.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            density = rng.choice([0.002, 0.02, 0.2, 0.7])
            targets = rng.random((32, 32)) < density
            if not targets.any():
                targets[rng.integers(32), rng.integers(32)] = True
            np.testing.assert_array_equal(squared_edt(targets), brute_force_squared(targets))

    def test_rectangular_grid(self):
        rng = np.random.default_rng(1)
        targets = rng.random((7, 19)) < 0.1
        targets[0, 0] = True
        np.testing.assert_array_equal(squared_edt(targets), brute_force_squared(targets))

    def test_empty_targets(self):
        with self.assertRaises(ValueError):
            squared_edt(np.zeros((4, 4), dtype=bool))


class TestSignedDistanceMap(unittest.TestCase):

    def test_class_absent(self):
        dm = signed_truncated_dm(np.zeros((6, 6), dtype=int), 2, threshold=7.0)
        np.testing.assert_array_equal(dm, np.full((6, 6), -7.0))

    def test_single_pixel(self):
        labels = np.zeros((5, 5), dtype=int)
        labels[2, 2] = 1
        dm = signed_truncated_dm(labels, 1)
        self.assertEqual(dm[2, 2], 0.0)
        for row, column in ((1, 2), (3, 2), (2, 1), (2, 3)):
            self.assertEqual(dm[row, column], -1.0)
        for row, column in ((1, 1), (1, 3), (3, 1), (3, 3)):
            self.assertAlmostEqual(dm[row, column], -np.sqrt(2), places=12)

    def test_truncation(self):
        labels = np.zeros((12, 12), dtype=int)
        labels[0, 0] = 1
        dm = signed_truncated_dm(labels, 1, threshold=3.0)
        self.assertEqual(dm[5, 0], -3.0)
        self.assertEqual(dm.min(), -3.0)

    def test_interior_not_truncated(self):
        labels = np.ones((21, 21), dtype=int)
        dm = signed_truncated_dm(labels, 1, threshold=2.0)
        self.assertEqual(dm[10, 10], 10.0)

    def test_random_slices(self):
        rng = np.random.default_rng(2)
        threshold = 5.0
        for trial in range(100):
            labels = rng.integers(0, 3, size=(16, 16)) * (rng.random((16, 16)) < rng.random())
            for class_id in (1, 2):
                dm = signed_truncated_dm(labels, class_id, threshold)
                np.testing.assert_allclose(dm, brute_force_dm(labels, class_id, threshold), atol=1e-9)
                self.assertGreaterEqual(dm.min(), -threshold)
                mask = labels == class_id
                self.assertTrue(np.all(dm[mask] >= 0))
                self.assertTrue(np.all(dm[~mask] < 0))

    def test_lipschitz_within_each_side(self):
        rng = np.random.default_rng(3)
        labels = (rng.random((20, 20)) < 0.4).astype(int)
        dm = signed_truncated_dm(labels, 1, threshold=100.0)
        inside = labels == 1
        points = np.argwhere(np.ones_like(labels, dtype=bool))
        for p, q in itertools.combinations(points[rng.choice(len(points), 60, replace=False)], 2):
            if inside[tuple(p)] != inside[tuple(q)]:
                continue
            self.assertLessEqual(abs(dm[tuple(p)] - dm[tuple(q)]), np.hypot(*(p - q)) + 1e-9)

    def test_translation(self):
        labels = np.zeros((30, 30), dtype=int)
        labels[8:14, 9:16] = 1
        shifted = np.roll(labels, (5, 4), axis=(0, 1))
        a = signed_truncated_dm(labels, 1, threshold=4.0)
        b = signed_truncated_dm(shifted, 1, threshold=4.0)
        np.testing.assert_allclose(b[13:19, 13:20], a[8:14, 9:16])

    def test_errors(self):
        labels = np.zeros((4, 4), dtype=int)
        with self.assertRaises(LabelError):
            signed_truncated_dm(labels, 0)
        with self.assertRaises(LabelError):
            signed_truncated_dm(labels, 4, num_classes=4)
        with self.assertRaises(ValueError):
            signed_truncated_dm(labels, 1, threshold=0)


class TestStack(unittest.TestCase):

    def test_channels(self):
        labels = np.zeros((8, 8), dtype=int)
        labels[1:4, 1:4] = 1
        labels[5:7, 5:7] = 3
        stack = dm_stack(labels, 4, threshold=6.0)
        self.assertEqual(stack.channels.shape, (3, 8, 8))
        self.assertEqual(stack.num_classes, 4)
        np.testing.assert_array_equal(stack.channels[1], -6.0)
        positive = stack.channels > 0
        self.assertFalse(np.any(positive.sum(axis=0) > 1))
        with self.assertRaises(LabelError):
            dm_stack(labels, 3)

    def test_empty_slice(self):
        stack = dm_stack(np.zeros((8, 8), dtype=int), 4)
        np.testing.assert_array_equal(stack.channels, -DEFAULT_THRESHOLD)
        np.testing.assert_array_equal(segmentation_from_dm(stack), 0)

    def test_segmentation_rule(self):
        channels = np.full((3, 1, 2), -1.0)
        channels[0, 0, 0], channels[2, 0, 0] = 0.5, 2.0
        np.testing.assert_array_equal(segmentation_from_dm(channels), [[3, 0]])

    def test_round_trip_on_phantom(self):
        image, labels = gen_phantom(PhantomSpec(seed=4))
        for z in range(labels.shape[2]):
            plane = labels.slice(z)
            stack = dm_stack(plane, 4)
            unique = (stack.channels > 0).sum(axis=0) == 1
            recovered = segmentation_from_dm(stack)
            np.testing.assert_array_equal(recovered[unique], plane[unique])
            np.testing.assert_array_equal(recovered[plane == 0], 0)

    def test_volume(self):
        labels = np.zeros((6, 6, 3), dtype=int)
        labels[2:4, 2:4, 1] = 2
        volume = dm_volume(labels, 2, threshold=3.0)
        self.assertEqual(volume.shape, (6, 6, 3))
        np.testing.assert_array_equal(volume[:, :, 0], -3.0)
        np.testing.assert_allclose(volume[:, :, 1], signed_truncated_dm(labels[:, :, 1], 2, 3.0))


if __name__ == '__main__':
    unittest.main()
