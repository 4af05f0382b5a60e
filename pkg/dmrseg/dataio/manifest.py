"""Dataset manifests: one case per line,
``case_id, image_path, label_path, subgroup_tag[, phase]``.

Relative paths resolve against the manifest's directory. Paired phases of one
patient share the case-id prefix before the last underscore (``<patient>_ED``).
"""
import logging
import os
from dataclasses import dataclass

import pandas as pd

from .nifti import read_nifti
from .volume import Volume, LabelVolume


LOGGER = logging.getLogger(__name__)

COLUMNS = ['case_id', 'image_path', 'label_path', 'subgroup_tag', 'phase']


def patient_id(case_id, phase=None):
    """Patient part of a case id: the prefix before the last underscore of a phased case"""
    if phase:
        return case_id.rsplit('_', 1)[0]
    return case_id


@dataclass
class ManifestEntry():
    case_id: str
    image_path: str
    label_path: str
    subgroup_tag: str = ''
    phase: str = None

    @property
    def patient(self):
        return patient_id(self.case_id, self.phase)


@dataclass
class Case():
    """A loaded case: image volume, reference labels and manifest metadata"""
    case_id: str
    image: Volume
    labels: LabelVolume
    subgroup_tag: str = ''
    phase: str = None

    @property
    def patient(self):
        return patient_id(self.case_id, self.phase)


def read_manifest(path):
    """:rtype: list of ManifestEntry"""
    if not os.path.exists(path):
        raise FileNotFoundError(f'Manifest {path} does not exist')
    table = pd.read_csv(path, header=None, names=COLUMNS, skipinitialspace=True, comment='#',
                        dtype=str, keep_default_na=False).fillna('')
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    for row in table.itertuples(index=False):
        if not row.case_id:
            continue
        if not row.image_path or not row.label_path:
            raise ValueError(f'{path}: case {row.case_id} lacks an image or label path')
        phase = row.phase.strip().upper() or None
        if phase not in (None, 'ED', 'ES'):
            raise ValueError(f'{path}: case {row.case_id} has unknown phase {row.phase}')
        entries.append(ManifestEntry(row.case_id.strip(),
                                     os.path.join(base, row.image_path.strip()),
                                     os.path.join(base, row.label_path.strip()),
                                     row.subgroup_tag.strip(), phase))
    LOGGER.debug('Read %d cases from %s', len(entries), path)
    return entries


def write_manifest(entries, path):
    """Write entries with paths relative to the manifest's directory where possible
    """
    base = os.path.dirname(os.path.abspath(path))
    with open(path, 'w') as handle:
        for entry in entries:
            fields = [entry.case_id,
                      os.path.relpath(entry.image_path, base),
                      os.path.relpath(entry.label_path, base),
                      entry.subgroup_tag or '']
            if entry.phase:
                fields.append(entry.phase)
            handle.write(', '.join(fields) + '\n')


def load_case(entry, num_classes=None):
    image = read_nifti(entry.image_path)
    labels = read_nifti(entry.label_path, labels=True, num_classes=num_classes)
    if image.shape != labels.shape:
        raise ValueError(f'Case {entry.case_id}: image {image.shape} and labels {labels.shape} differ')
    return Case(entry.case_id, image, labels, entry.subgroup_tag, entry.phase)


def load_cases(entries, num_classes=None):
    return [load_case(entry, num_classes) for entry in entries]


def pair_phases(phases):
    """Group case ids by patient into ``{'ED': case_id, 'ES': case_id}`` pairs;
    patients missing a phase are left out

    :param phases: Phase (or None) per case id
    :type phases: dict
    :rtype: dict
    """
    patients = {}
    for case_id, phase in phases.items():
        if phase:
            patients.setdefault(patient_id(case_id, phase), {})[phase] = case_id
    return {patient: pair for patient, pair in patients.items() if set(pair) == {'ED', 'ES'}}
