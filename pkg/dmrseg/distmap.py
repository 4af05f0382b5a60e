"""Exact Euclidean distance transforms and truncated signed distance maps.

Distances are in pixels of the (resampled) slice grid.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import LabelError


LOGGER = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 250.0

# Stand-in for +infinity in the envelope arithmetic; finite so that differences
# of two "infinite" samples stay well defined
_FAR = 1e12

_FOUR_NEIGHBOURS = ndimage.generate_binary_structure(2, 1)


@dataclass
class DistanceMapStack():
    """Truncated signed distance maps of the foreground classes of one slice.

    :param channels: (C - 1) x H x W planes; plane k - 1 belongs to class k
    :type channels: numpy.ndarray
    :param threshold: Truncation distance T in pixels
    :type threshold: float
    """
    channels: np.ndarray
    threshold: float

    @property
    def num_classes(self):
        return self.channels.shape[0] + 1


def boundary_mask(mask):
    """Foreground pixels with at least one background 4-neighbour. Pixels on the
    image border count as touching background.

    :rtype: numpy.ndarray of bool
    """
    mask = np.asarray(mask, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=_FOUR_NEIGHBOURS, border_value=0)
    return mask & ~eroded


def boundary_pixels(mask):
    """The boundary of ``mask`` as a set of (row, column) pairs
    """
    return {tuple(int(i) for i in p) for p in np.argwhere(boundary_mask(mask))}


def _lower_envelope(f):
    """Squared distance transform along the last axis of ``f``, one line per row.

    Every line is processed at once: each keeps its own stack of parabolas
    ``v`` with the breakpoints ``z`` between them, and the pops that the 1-D
    algorithm performs one line at a time are applied to all lines that need
    them in the same vectorized step.
    """
    lines, n = f.shape
    rows = np.arange(lines)
    v = np.zeros((lines, n), dtype=np.intp)
    z = np.empty((lines, n + 1))
    z[:, 0] = -np.inf
    z[:, 1] = np.inf
    k = np.zeros(lines, dtype=np.intp)
    for q in range(1, n):
        height = f[:, q] + q * q
        while True:
            vk = v[rows, k]
            s = (height - (f[rows, vk] + vk * vk)) / (2 * (q - vk))
            pop = s <= z[rows, k]
            if not pop.any():
                break
            k = k - pop
        k = k + 1
        v[rows, k] = q
        z[rows, k] = s
        z[rows, k + 1] = np.inf

    out = np.empty((lines, n))
    k = np.zeros(lines, dtype=np.intp)
    for q in range(n):
        while True:
            advance = z[rows, k + 1] < q
            if not advance.any():
                break
            k = k + advance
        vk = v[rows, k]
        out[:, q] = (q - vk) ** 2 + f[rows, vk]
    return out


def squared_edt(targets):
    """Exact squared Euclidean distance from every pixel to the nearest target pixel,
    computed column-wise then row-wise with the lower envelope of parabolas.

    :param targets: H x W boolean array, at least one pixel set
    :type targets: numpy.ndarray
    :return: H x W integer-valued float array
    :rtype: numpy.ndarray
    """
    targets = np.asarray(targets, dtype=bool)
    if not targets.any():
        raise ValueError('The distance transform needs at least one target pixel')
    f = np.where(targets, 0.0, _FAR)
    columns = _lower_envelope(f.T).T
    return _lower_envelope(columns)


def edt(mask, targets):
    """Euclidean distance (pixels) from every pixel of ``mask``'s grid to the nearest target.

    :param mask: Slice whose grid the distances are computed on
    :type mask: numpy.ndarray
    :param targets: Boolean array of the same shape, or a collection of (row, column) pairs
    :rtype: numpy.ndarray
    """
    shape = np.shape(mask)
    if not isinstance(targets, np.ndarray):
        grid = np.zeros(shape, dtype=bool)
        for row, column in targets:
            grid[row, column] = True
        targets = grid
    return np.sqrt(squared_edt(targets))


def signed_truncated_dm(labels, class_id, threshold=DEFAULT_THRESHOLD, num_classes=None):
    """Truncated signed distance map of one class: positive distance to the class
    boundary inside the class (never truncated), negative distance clamped at
    ``-threshold`` outside it, and ``-threshold`` everywhere when the class is absent.

    :param labels: H x W integer label slice
    :type labels: numpy.ndarray
    :param class_id: Foreground class (1 or more)
    :type class_id: int
    :param threshold: Truncation distance T in pixels
    :type threshold: float
    :param num_classes: When given, class ids at or above it are rejected
    :type num_classes: int, optional
    :rtype: numpy.ndarray
    """
    if threshold <= 0:
        raise ValueError(f'Distance threshold must be positive, got {threshold}')
    if class_id < 1 or (num_classes is not None and class_id >= num_classes):
        raise LabelError(f'{class_id} is not a foreground class')
    labels = np.asarray(labels)
    mask = labels == class_id
    if not mask.any():
        return np.full(labels.shape, -float(threshold))
    distance = np.sqrt(squared_edt(boundary_mask(mask)))
    return np.where(mask, distance, -np.minimum(distance, threshold))


def dm_stack(labels, num_classes, threshold=DEFAULT_THRESHOLD):
    """Distance maps of classes 1 .. num_classes - 1 of one slice.

    :rtype: DistanceMapStack
    """
    if num_classes < 2:
        raise ValueError(f'Need at least two classes, got {num_classes}')
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f'Labels must lie in 0..{num_classes - 1}')
    channels = np.stack([signed_truncated_dm(labels, k, threshold) for k in range(1, num_classes)])
    return DistanceMapStack(channels, float(threshold))


def segmentation_from_dm(dm):
    """Labels from the zero level set: a pixel takes the class whose map is
    positive there, the largest such map when several are, else background.

    :param dm: A stack, or a (C - 1) x ... array of maps
    :type dm: DistanceMapStack or numpy.ndarray
    :rtype: numpy.ndarray
    """
    channels = dm.channels if isinstance(dm, DistanceMapStack) else np.asarray(dm)
    best = channels.argmax(axis=0)
    positive = channels.max(axis=0) > 0
    return np.where(positive, best + 1, 0).astype(np.int64)


def dm_volume(labels, class_id, threshold=DEFAULT_THRESHOLD, num_classes=None):
    """Per-slice distance maps of one class for an H x W x D label grid
    """
    labels = np.asarray(labels)
    planes = [signed_truncated_dm(labels[:, :, z], class_id, threshold, num_classes)
              for z in range(labels.shape[2])]
    return np.stack(planes, axis=2)
