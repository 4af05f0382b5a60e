"""Synthetic short-axis cardiac phantoms.

Every foreground slice holds a blood-pool disk (class 3) enclosed by a
myocardial ring (class 2) with a crescent (class 1) beside it. The first and
last slices of the stack can be left empty, like apical and basal slices
beyond the heart. The end-systolic phase shrinks the blood pool and thickens
the ring around the same centre.
"""
import logging
from dataclasses import dataclass, fields

import numpy as np

from .volume import Volume, LabelVolume
from ..errors import PhantomSpecError


LOGGER = logging.getLogger(__name__)

PHASES = ('ED', 'ES')

BACKGROUND, CRESCENT, RING, DISK = 0, 1, 2, 3
NUM_CLASSES = 4


@dataclass(frozen=True)
class PhantomSpec():
    """Geometry, appearance and layout of generated phantoms. Lengths are pixels.

    :param size: Square slice extent
    :param slices: Slices per volume
    :param empty_fraction: Share of slices without foreground, split between the
        apical end (first) and the basal end (last)
    :param disk_radius: Range of the end-diastolic blood-pool radius
    :param ring_thickness: Range of the end-diastolic myocardium thickness
    :param crescent_radius: Range of the radius of the disk the crescent is cut from
    :param center_jitter: Largest offset of the heart from the slice centre
    :param taper: Fraction of the radius kept at the apex; slices grow linearly toward the base
    :param es_contraction: Blood-pool radius factor at end-systole
    :param es_thickening: Ring thickness factor at end-systole
    :param means: Intensity mean per class
    :param noise: Standard deviation of the additive Gaussian noise
    :param spacing: Voxel spacing, mm
    :param phases: Phases written per case
    """
    size: int = 64
    slices: int = 10
    empty_fraction: float = 0.1
    disk_radius: tuple = (6.0, 9.0)
    ring_thickness: tuple = (2.0, 4.0)
    crescent_radius: tuple = (6.0, 8.0)
    center_jitter: float = 3.0
    taper: float = 0.6
    es_contraction: float = 0.7
    es_thickening: float = 1.3
    means: tuple = (0.1, 0.5, 0.3, 0.9)
    noise: float = 0.05
    spacing: tuple = (1.5625, 1.5625, 10.0)
    phases: tuple = ('ED',)
    seed: int = 0

    @classmethod
    def from_mapping(cls, values):
        """Build a spec from text values such as a flat ``key = value`` file
        """
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise PhantomSpecError(f'Unknown phantom setting {key}')
            default = known[key].default
            try:
                if isinstance(default, tuple):
                    parts = [p.strip() for p in str(raw).split(',') if p.strip()] if isinstance(raw, str) else raw
                    kwargs[key] = tuple(p if isinstance(default[0], str) else float(p) for p in parts)
                else:
                    kwargs[key] = type(default)(raw)
            except ValueError:
                raise PhantomSpecError(f'Invalid value {raw!r} for {key}')
        return cls(**kwargs)

    @property
    def empty_slices(self):
        return int(round(self.slices * self.empty_fraction))

    def empty_indices(self):
        count = self.empty_slices
        apical = count - count // 2
        basal = count // 2
        return list(range(apical)) + list(range(self.slices - basal, self.slices))

    def validate(self):
        for name in ('disk_radius', 'ring_thickness', 'crescent_radius'):
            low, high = getattr(self, name)
            if low > high:
                raise PhantomSpecError(f'{name} range is reversed: {low} > {high}')
        if self.size < 8 or self.slices < 1:
            raise PhantomSpecError('Phantoms need at least an 8x8 slice and one slice')
        if not 0 <= self.empty_fraction < 1:
            raise PhantomSpecError(f'empty_fraction must lie in [0, 1), got {self.empty_fraction}')
        if self.empty_slices >= self.slices:
            raise PhantomSpecError('Every slice would be empty')
        if not 0 < self.taper <= 1 or not 0 < self.es_contraction <= 1 or self.es_thickening < 1:
            raise PhantomSpecError('taper and es_contraction must lie in (0, 1], es_thickening at least 1')
        # the smallest ring still needs a disk of radius 1 inside a ring of thickness 1
        if self.disk_radius[0] * self.taper * self.es_contraction < 1:
            raise PhantomSpecError('Disk radius shrinks below one pixel')
        if self.ring_thickness[0] * self.taper < 1:
            raise PhantomSpecError('Ring thickness shrinks below one pixel; the ring cannot enclose the disk')
        # blood pool plus myocardium (at end-systole thickening) plus the crescent beside it
        extent = (self.center_jitter + self.disk_radius[1] + self.ring_thickness[1] * self.es_thickening
                  + 1.5 * self.crescent_radius[1])
        if extent >= self.size / 2 - 1:
            raise PhantomSpecError(f'Geometry of extent {extent:.1f} does not fit a '
                                   f'{self.size}x{self.size} slice')
        if len(self.means) != NUM_CLASSES:
            raise PhantomSpecError(f'Need {NUM_CLASSES} intensity means, got {len(self.means)}')
        if self.noise < 0 or len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise PhantomSpecError('Noise must be non-negative and spacing positive')
        unknown = set(self.phases) - set(PHASES)
        if unknown or not self.phases:
            raise PhantomSpecError(f'Phases must be drawn from {PHASES}, got {self.phases}')
        return self


def _geometry(spec, rng):
    return {
        'center': (spec.size - 1) / 2 + rng.uniform(-spec.center_jitter, spec.center_jitter, size=2),
        'disk': rng.uniform(*spec.disk_radius),
        'ring': rng.uniform(*spec.ring_thickness),
        'crescent': rng.uniform(*spec.crescent_radius),
        'angle': rng.uniform(0, 2 * np.pi),
    }


def phantom_labels(spec, geometry, phase='ED'):
    """Label grid of one phantom volume for a drawn geometry
    """
    rows, columns = np.mgrid[:spec.size, :spec.size].astype(np.float64)
    labels = np.zeros((spec.size, spec.size, spec.slices), dtype=np.int64)
    empty = set(spec.empty_indices())
    filled = [z for z in range(spec.slices) if z not in empty]
    center = geometry['center']
    direction = np.array([np.cos(geometry['angle']), np.sin(geometry['angle'])])
    for position, z in enumerate(filled):
        growth = 1.0 if len(filled) == 1 else position / (len(filled) - 1)
        factor = spec.taper + (1 - spec.taper) * growth
        disk = geometry['disk'] * factor
        ring = geometry['ring'] * factor
        if phase == 'ES':
            disk *= spec.es_contraction
            ring *= spec.es_thickening
        crescent = geometry['crescent'] * factor
        distance = np.hypot(rows - center[0], columns - center[1])
        # the crescent disk sits beside the ring and is cut by it
        offset = center + direction * (disk + ring + crescent / 2)
        crescent_distance = np.hypot(rows - offset[0], columns - offset[1])
        plane = np.zeros((spec.size, spec.size), dtype=np.int64)
        plane[(crescent_distance <= crescent) & (distance > disk + ring)] = CRESCENT
        plane[(distance > disk) & (distance <= disk + ring)] = RING
        plane[distance <= disk] = DISK
        labels[:, :, z] = plane
    return labels


def gen_phantom(spec, case_index=0, phase='ED'):
    """One phantom volume and its labels; the geometry is drawn from
    ``(spec.seed, case_index)`` so both phases of a case share it.

    :rtype: tuple(Volume, LabelVolume)
    """
    spec.validate()
    if phase not in PHASES:
        raise PhantomSpecError(f'Unknown phase {phase}')
    geometry = _geometry(spec, np.random.default_rng([spec.seed, case_index]))
    labels = phantom_labels(spec, geometry, phase)
    noise_rng = np.random.default_rng([spec.seed, case_index, PHASES.index(phase) + 1])
    image = np.asarray(spec.means, dtype=np.float64)[labels]
    image = image + noise_rng.normal(0.0, spec.noise, size=labels.shape)
    return Volume(image, spec.spacing), LabelVolume(labels, NUM_CLASSES, spec.spacing)


def gen_phantom_pair(spec, case_index=0):
    """End-diastolic and end-systolic volumes of one case

    :rtype: dict
    """
    return {phase: gen_phantom(spec, case_index, phase) for phase in PHASES}
