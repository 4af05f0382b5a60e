"""Confidence intervals and paired significance tests for comparing two
evaluation reports of the same cases (baseline against regularized, learned
against fixed weighting, one truncation threshold against another).
"""
import logging

import numpy as np
import pandas as pd
from scipy import stats

from .errors import UsageError


LOGGER = logging.getLogger(__name__)

COMPARED_METRICS = ('dice', 'jaccard', 'msd_mm', 'hd_mm')


def bootstrap_ci(values, n_boot=1000, alpha=0.05, seed=0):
    """Percentile bootstrap interval of the mean; NaN values are left out

    :return: mean, lower bound, upper bound (all NaN without defined values)
    :rtype: tuple
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    values = values[~np.isnan(values)]
    if not len(values):
        return float('nan'), float('nan'), float('nan')
    if not 0 < alpha < 1 or n_boot < 1:
        raise ValueError('alpha must lie in (0, 1) and n_boot be at least 1')
    rng = np.random.default_rng(seed)
    means = values[rng.integers(0, len(values), size=(n_boot, len(values)))].mean(axis=1)
    low, high = np.quantile(means, [alpha / 2, 1 - alpha / 2])
    return float(values.mean()), float(low), float(high)


def paired_wilcoxon(a, b):
    """Two-sided Wilcoxon signed-rank p-value of paired samples. Pairs with a
    NaN member are dropped; identical samples give 1.0.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f'Paired samples differ in length: {len(a)} and {len(b)}')
    defined = ~(np.isnan(a) | np.isnan(b))
    a, b = a[defined], b[defined]
    if not len(a):
        return float('nan')
    if np.all(a == b):
        return 1.0
    return float(stats.wilcoxon(a, b).pvalue)


def compare_reports(report_a, report_b, metrics=COMPARED_METRICS, n_boot=1000, alpha=0.05, seed=0):
    """Compare two reports case by case.

    :param report_a: Case rows of the first report (see :func:`dmrseg.metrics.read_report`)
    :type report_a: pandas.DataFrame
    :param report_b: Case rows of the second report
    :type report_b: pandas.DataFrame
    :param metrics: Metric columns to compare
    :return: One row per class and metric with both means, their bootstrap
        intervals, the number of paired cases and the Wilcoxon p-value
    :rtype: pandas.DataFrame
    """
    paired = report_a.merge(report_b, on=['case_id', 'class'], suffixes=('_a', '_b'))
    if not len(paired):
        raise UsageError('The reports share no (case, class) rows')
    missing = [m for m in metrics if f'{m}_a' not in paired.columns]
    if missing:
        raise UsageError(f'Metrics not in both reports: {", ".join(missing)}')
    unmatched = max(len(report_a), len(report_b)) - len(paired)
    if unmatched:
        LOGGER.warning('%d report rows have no counterpart and are left out', unmatched)
    rows = []
    for class_id, group in paired.groupby('class', sort=True):
        for metric in metrics:
            a = group[f'{metric}_a'].to_numpy(dtype=np.float64)
            b = group[f'{metric}_b'].to_numpy(dtype=np.float64)
            mean_a, low_a, high_a = bootstrap_ci(a, n_boot, alpha, seed)
            mean_b, low_b, high_b = bootstrap_ci(b, n_boot, alpha, seed)
            rows.append({'class': class_id, 'metric': metric,
                         'n': int((~(np.isnan(a) | np.isnan(b))).sum()),
                         'mean_a': mean_a, 'low_a': low_a, 'high_a': high_a,
                         'mean_b': mean_b, 'low_b': low_b, 'high_b': high_b,
                         'p_value': paired_wilcoxon(a, b)})
    return pd.DataFrame(rows)
