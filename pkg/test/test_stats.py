import math
import os
import tempfile
import unittest

import numpy as np
import pandas as pd

from dmrseg.diag import weight_histogram, read_curves, plot_curves
from dmrseg.errors import UsageError
from dmrseg.networks import ArchSpec, build_model, count_parameters
from dmrseg.stats import *


def report(values, cases=10, classes=(1, 2, 3)):
    rows = []
    for case in range(cases):
        for class_id in classes:
            base = values[case % len(values)]
            rows.append({'case_id': f'case{case:03d}', 'subgroup_tag': '', 'class': class_id,
                         'dice': base, 'jaccard': base / (2 - base), 'msd_mm': 1.0 - base, 'hd_mm': 2.0 - base})
    return pd.DataFrame(rows)


class TestBootstrap(unittest.TestCase):

    def test_constant(self):
        np.testing.assert_allclose(bootstrap_ci([0.8] * 12), 0.8)

    def test_interval(self):
        values = np.random.default_rng(0).normal(0.9, 0.05, size=200)
        mean, low, high = bootstrap_ci(values, seed=3)
        self.assertAlmostEqual(mean, values.mean())
        self.assertLess(low, mean)
        self.assertLess(mean, high)
        self.assertLess(high - low, 0.05)
        self.assertEqual(bootstrap_ci(values, seed=3), (mean, low, high))

    def test_undefined_values(self):
        mean, low, high = bootstrap_ci([1.0, float('nan'), 3.0], n_boot=50)
        self.assertEqual(mean, 2.0)
        self.assertTrue(1.0 <= low <= high <= 3.0)
        self.assertTrue(all(math.isnan(v) for v in bootstrap_ci([float('nan')])))
        with self.assertRaises(ValueError):
            bootstrap_ci([1.0, 2.0], alpha=1.5)


class TestWilcoxon(unittest.TestCase):

    def test_identical(self):
        self.assertEqual(paired_wilcoxon([0.5, 0.7, 0.9], [0.5, 0.7, 0.9]), 1.0)

    def test_shifted(self):
        a = np.random.default_rng(1).random(20)
        self.assertLess(paired_wilcoxon(a, a + 0.1), 0.001)

    def test_undefined_pairs(self):
        self.assertEqual(paired_wilcoxon([1.0, float('nan')], [1.0, 2.0]), 1.0)
        self.assertTrue(math.isnan(paired_wilcoxon([float('nan')], [1.0])))
        with self.assertRaises(ValueError):
            paired_wilcoxon([1.0, 2.0], [1.0])


class TestCompareReports(unittest.TestCase):

    def test_rows(self):
        a = report([0.80, 0.85, 0.90])
        b = report([0.82, 0.88, 0.91])
        table = compare_reports(a, b, n_boot=200)
        self.assertEqual(len(table), 3 * len(COMPARED_METRICS))
        self.assertEqual(list(table.columns), ['class', 'metric', 'n', 'mean_a', 'low_a', 'high_a',
                                               'mean_b', 'low_b', 'high_b', 'p_value'])
        row = table[(table['class'] == 1) & (table['metric'] == 'dice')].iloc[0]
        self.assertEqual(row['n'], 10)
        self.assertAlmostEqual(row['mean_a'], a[a['class'] == 1]['dice'].mean())
        self.assertLess(row['mean_a'], row['mean_b'])
        self.assertLess(row['p_value'], 0.05)

    def test_partial_overlap(self):
        table = compare_reports(report([0.9], cases=10), report([0.8], cases=4), metrics=('dice',))
        self.assertEqual(set(table['n']), {4})

    def test_errors(self):
        a = report([0.9], cases=2)
        b = a.assign(case_id=['other'] * len(a))
        with self.assertRaises(UsageError):
            compare_reports(a, b)
        with self.assertRaises(UsageError):
            compare_reports(a, a, metrics=('dice', 'volume'))


class TestDiagnostics(unittest.TestCase):

    def test_weight_histogram(self):
        params = build_model(ArchSpec(stage_channels=(4, 8, 16), bottleneck_channels=32, dmr_attached=True))
        table = weight_histogram(params)
        self.assertEqual(len(table), 101)
        self.assertEqual(table['count'].sum(), count_parameters(params))
        for group in ('encoder', 'seg_decoder', 'dmr_decoder'):
            self.assertEqual(table[group].sum(), count_parameters(params, group))
        np.testing.assert_array_equal(table['bin_low'][1:].to_numpy(), table['bin_high'][:-1].to_numpy())
        kernels = weight_histogram(params, kernels_only=True, bins=11)
        expected = sum(t.size for group in params.groups.values()
                       for name, t in group.params.items() if name.endswith('.weight'))
        self.assertEqual(len(kernels), 11)
        self.assertEqual(kernels['count'].sum(), expected)

    def test_curves(self):
        with tempfile.TemporaryDirectory() as directory:
            for run, scale in (('unet', 1.0), ('dmr_unet', 0.5)):
                os.makedirs(os.path.join(directory, run))
                pd.DataFrame({'epoch': [0, 1, 2], 'train_loss': [3.0 * scale, 2.0 * scale, 1.0 * scale],
                              'train_mad': [float('nan')] * 3, 'val_dice_mean': [0.2, 0.5, 0.7]}
                             ).to_csv(os.path.join(directory, run, 'training_log.csv'), index=False)
            curves = read_curves(directory)
            self.assertEqual(len(curves), 6)
            self.assertEqual(sorted(curves['run'].unique()), ['dmr_unet', 'unet'])
            self.assertEqual(len(read_curves(os.path.join(directory, 'unet', 'training_log.csv'))), 3)
            first, second = (os.path.join(directory, name) for name in ('a.svg', 'b.svg'))
            plot_curves(curves, first)
            plot_curves(curves, second)
            with open(first, 'rb') as a, open(second, 'rb') as b:
                self.assertEqual(a.read(), b.read())
            with self.assertRaises(FileNotFoundError):
                read_curves(os.path.join(directory, 'missing'))


if __name__ == '__main__':
    unittest.main()
