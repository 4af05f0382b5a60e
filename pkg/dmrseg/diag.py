"""Diagnostic dumps: parameter-value histograms and learning curves."""
import glob
import logging
import os

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .networks.model import GROUPS


LOGGER = logging.getLogger(__name__)

HISTOGRAM_BINS = 101
LOG_NAME = 'training_log.csv'

LOSS_CURVES = ('train_loss', 'train_ce', 'train_mad', 'val_ce', 'val_mad')
DICE_CURVES = ('val_dice_mean',)


def weight_histogram(params, kernels_only=False, bins=HISTOGRAM_BINS):
    """Counts of parameter values on a fixed grid of ``bins`` equal bins spanning
    the observed range, in total and per parameter group

    :param params: The model to inspect
    :type params: ModelParams
    :param kernels_only: Count convolution kernels only (no biases or batchnorm affine terms)
    :type kernels_only: bool
    :rtype: pandas.DataFrame
    """
    values = {}
    for name in GROUPS:
        if name not in params.groups:
            continue
        tensors = [t.data.ravel() for key, t in params.groups[name].params.items()
                   if not kernels_only or key.endswith('.weight')]
        values[name] = np.concatenate(tensors) if tensors else np.zeros(0)
    everything = np.concatenate(list(values.values())).astype(np.float64)
    low, high = (float(everything.min()), float(everything.max())) if everything.size else (0.0, 0.0)
    if low == high:
        low, high = low - 0.5, high + 0.5
    edges = np.linspace(low, high, bins + 1)
    table = pd.DataFrame({'bin_low': edges[:-1], 'bin_high': edges[1:],
                          'count': np.histogram(everything, bins=edges)[0]})
    for name, group_values in values.items():
        table[name] = np.histogram(group_values, bins=edges)[0]
    return table


def read_curves(path):
    """Training logs under ``path`` (a log file, or a directory searched for
    ``training_log.csv``), stacked with a ``run`` column naming each log's directory

    :rtype: pandas.DataFrame
    """
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, '**', LOG_NAME), recursive=True))
    elif os.path.exists(path):
        files = [path]
    else:
        files = []
    if not files:
        raise FileNotFoundError(f'No training logs found at {path}')
    tables = []
    for file in files:
        table = pd.read_csv(file)
        table.insert(0, 'run', os.path.basename(os.path.dirname(os.path.abspath(file))))
        tables.append(table)
    return pd.concat(tables, ignore_index=True)


def plot_curves(curves, path):
    """Render loss and validation-Dice curves per run to a vector figure

    :param curves: Stacked logs from :func:`read_curves`
    :type curves: pandas.DataFrame
    :param path: Output file; the extension picks the format (``.svg``)
    :return: the plotted rows
    :rtype: pandas.DataFrame
    """
    plt.rcParams['svg.hashsalt'] = 'dmrseg'
    figure, (losses, scores) = plt.subplots(1, 2, figsize=(10, 4))
    for run, log in curves.groupby('run', sort=True):
        for column in LOSS_CURVES:
            if column in log and log[column].notna().any():
                losses.plot(log['epoch'], log[column], marker='.', label=f'{run} {column}')
        for column in DICE_CURVES:
            if column in log and log[column].notna().any():
                scores.plot(log['epoch'], log[column], marker='.', label=f'{run} {column}')
    losses.set_xlabel('epoch')
    losses.set_ylabel('loss')
    scores.set_xlabel('epoch')
    scores.set_ylabel('mean foreground Dice')
    for axis in (losses, scores):
        if axis.lines:
            axis.legend(fontsize='small')
    figure.tight_layout()
    figure.savefig(path, metadata={'Date': None})
    plt.close(figure)
    LOGGER.info('Plotted %d epochs of %d runs to %s', len(curves), curves['run'].nunique(), path)
    return curves
