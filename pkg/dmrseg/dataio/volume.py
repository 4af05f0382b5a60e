from dataclasses import dataclass, field

import numpy as np

from ..errors import LabelError


@dataclass
class Volume():
    """Real-valued H x W x D voxel grid with physical spacing in mm.

    :param voxels: Intensities, fastest-varying axis first
    :type voxels: numpy.ndarray
    :param spacing: Voxel extent along each axis, mm
    :type spacing: tuple
    :param origin: Position of the first voxel, mm
    :type origin: tuple
    """
    voxels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = field(default=(0.0, 0.0, 0.0))

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f'Spacing components must be positive, got {self.spacing}')

    @property
    def shape(self):
        return self.voxels.shape

    def slice(self, z):
        return self.voxels[:, :, z]


@dataclass
class LabelVolume():
    """Integer H x W x D label grid. All labels lie below ``num_classes``.
    """
    labels: np.ndarray
    num_classes: int
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = field(default=(0.0, 0.0, 0.0))

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if not np.issubdtype(self.labels.dtype, np.integer):
            rounded = np.rint(self.labels)
            if not np.array_equal(rounded, self.labels):
                raise LabelError('Label grids must hold whole numbers')
            self.labels = rounded
        self.labels = self.labels.astype(np.int64)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f'Spacing components must be positive, got {self.spacing}')
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelError(f'Labels must lie in 0..{self.num_classes - 1}, '
                             f'found {self.labels.min()}..{self.labels.max()}')

    @property
    def shape(self):
        return self.labels.shape

    def slice(self, z):
        return self.labels[:, :, z]

    def foreground_slices(self):
        """Indices of the slices holding at least one foreground voxel
        """
        return [int(z) for z in np.flatnonzero((self.labels > 0).any(axis=(0, 1)))]
