"""Slice-wise preprocessing and augmentation.

The preprocessing order is fixed: resample to the common in-plane spacing,
crop or pad to the common size, then clip and z-score the intensities.
Label grids always go through nearest-neighbour sampling and never acquire
new values.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import Volume, LabelVolume


LOGGER = logging.getLogger(__name__)

COMMON_SPACING = 1.5625
CLIP_PERCENTILE = 99.0
ZSCORE_MIN_SD = 1e-6

SCALE_RANGE = (0.8, 1.2)
ROTATION_RANGE = (0.0, 360.0)
SHIFT_FRACTION = 1.0 / 8.0


def _pair(value):
    if np.ndim(value) == 0:
        return float(value), float(value)
    return float(value[0]), float(value[1])


def resample_slice(slice, in_spacing, out_spacing=COMMON_SPACING, labels=False):
    """Resample one 2-D slice to a new pixel spacing. Output extent along each
    axis is ``round(extent * in / out)``; pixel centres stay aligned.

    :param in_spacing: Current spacing (one value or one per axis), mm
    :param out_spacing: Target spacing, mm
    :param labels: Nearest-neighbour sampling when True, bilinear otherwise
    :type labels: bool
    :rtype: numpy.ndarray
    """
    slice = np.asarray(slice)
    in_spacing, out_spacing = _pair(in_spacing), _pair(out_spacing)
    if min(in_spacing + out_spacing) <= 0:
        raise ValueError(f'Spacings must be positive, got {in_spacing} and {out_spacing}')
    shape = tuple(max(1, int(round(n * i / o))) for n, i, o in zip(slice.shape, in_spacing, out_spacing))
    if shape == slice.shape and in_spacing == out_spacing:
        return slice.copy()
    axes = [(np.arange(n) + 0.5) * (o / i) - 0.5 for n, i, o in zip(shape, in_spacing, out_spacing)]
    coordinates = np.meshgrid(*axes, indexing='ij')
    return ndimage.map_coordinates(slice, coordinates, order=0 if labels else 1, mode='nearest')


def crop_or_pad(slice, target):
    """Centre ``slice`` on a ``target`` (H, W) grid, zero padding where it is
    smaller. Odd remainders go to the bottom and right. Trailing axes are kept.
    """
    slice = np.asarray(slice)
    out = slice
    for axis, wanted in enumerate(target):
        extent = out.shape[axis]
        if extent > wanted:
            start = (extent - wanted) // 2
            out = np.take(out, np.arange(start, start + wanted), axis=axis)
        elif extent < wanted:
            before = (wanted - extent) // 2
            widths = [(0, 0)] * out.ndim
            widths[axis] = (before, wanted - extent - before)
            out = np.pad(out, widths)
    return out


def normalize_intensity(voxels):
    """Clip above the 99th percentile (linear interpolation between order
    statistics) and z-score. A constant input maps to zeros.
    """
    voxels = np.asarray(voxels, dtype=np.float64)
    if voxels.size == 0:
        return voxels.copy()
    clipped = np.minimum(voxels, np.percentile(voxels, CLIP_PERCENTILE))
    sd = clipped.std()
    if sd < ZSCORE_MIN_SD:
        return np.zeros_like(clipped)
    return (clipped - clipped.mean()) / sd


@dataclass(frozen=True)
class SimilarityTransform():
    """Isotropic scaling and rotation about the slice centre, then a translation

    :param scale: Zoom factor
    :param angle: Rotation, degrees
    :param shift: (rows, columns) translation, pixels
    """
    scale: float = 1.0
    angle: float = 0.0
    shift: tuple = (0.0, 0.0)

    @staticmethod
    def get_params(rng, shape):
        height, width = shape[:2]
        scale = rng.uniform(*SCALE_RANGE)
        angle = rng.uniform(*ROTATION_RANGE)
        shift = (rng.uniform(-SHIFT_FRACTION, SHIFT_FRACTION) * height,
                 rng.uniform(-SHIFT_FRACTION, SHIFT_FRACTION) * width)
        return SimilarityTransform(scale, angle, shift)

    def _inverse(self, shape):
        theta = np.deg2rad(self.angle)
        forward = self.scale * np.array([[np.cos(theta), -np.sin(theta)],
                                         [np.sin(theta), np.cos(theta)]])
        matrix = np.linalg.inv(forward)
        centre = (np.asarray(shape[:2], dtype=np.float64) - 1) / 2
        offset = centre - matrix @ (centre + np.asarray(self.shift, dtype=np.float64))
        return matrix, offset

    def __call__(self, slice, labels):
        """Warp an intensity slice bilinearly and its labels by nearest neighbour;
        samples from outside the slice become 0 and background.
        """
        slice = np.asarray(slice)
        labels = np.asarray(labels)
        if self.scale == 1.0 and self.angle == 0.0 and tuple(self.shift) == (0.0, 0.0):
            return slice.copy(), labels.copy()
        matrix, offset = self._inverse(slice.shape)
        warped = ndimage.affine_transform(slice.astype(np.float64), matrix, offset, order=1,
                                          mode='constant', cval=0.0)
        warped_labels = ndimage.affine_transform(labels, matrix, offset, order=0,
                                                 mode='constant', cval=0)
        return warped, warped_labels


def augment(slice, labels, rng):
    """One random similarity transform of an image slice and its labels: scale
    in [0.8, 1.2], rotation in [0, 360) degrees, translation up to 1/8 of the
    extent along each axis.

    :param rng: Per-sample random stream
    :type rng: numpy.random.Generator
    :rtype: tuple(numpy.ndarray, numpy.ndarray)
    """
    return SimilarityTransform.get_params(rng, np.shape(slice))(slice, labels)


def preprocess_case(volume, labels=None, target=(256, 256), out_spacing=COMMON_SPACING):
    """Resample every slice in-plane, crop/pad to ``target`` and normalize the
    intensities of the whole volume. The through-plane spacing is untouched.

    :type volume: Volume
    :type labels: LabelVolume, optional
    :rtype: tuple(Volume, LabelVolume or None)
    """
    in_spacing = volume.spacing[:2]
    depth = volume.shape[2]
    image = np.stack([crop_or_pad(resample_slice(volume.slice(z), in_spacing, out_spacing), target)
                      for z in range(depth)], axis=2)
    spacing = (out_spacing, out_spacing, volume.spacing[2])
    out = Volume(normalize_intensity(image), spacing, volume.origin)
    if labels is None:
        return out, None
    if labels.shape != volume.shape:
        raise ValueError(f'Labels {labels.shape} and image {volume.shape} differ in shape')
    grid = np.stack([crop_or_pad(resample_slice(labels.slice(z), in_spacing, out_spacing, labels=True),
                                 target)
                     for z in range(depth)], axis=2)
    LOGGER.debug('Preprocessed %s to %s', volume.shape, out.shape)
    return out, LabelVolume(grid, labels.num_classes, spacing, labels.origin)
