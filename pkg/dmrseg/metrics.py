"""Segmentation quality metrics, clinical indices and agreement statistics.

Undefined values (0/0 rates, distances to an empty surface, EF with zero EDV)
are reported as NaN; aggregates skip them and report how many values were defined.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import ndimage
from scipy.spatial import cKDTree

from .dataio.manifest import pair_phases
from .dataio.volume import LabelVolume
from .errors import DimensionError


LOGGER = logging.getLogger(__name__)

UNDEFINED = float('nan')

MYOCARDIUM_DENSITY = 1.06  # g/cm^3
LOA_FACTOR = 1.96
REGION_SHARE = 0.25
REGIONS = ('apical', 'mid', 'basal')

# class ids of the short-axis label layout
RV_CLASS, MYO_CLASS, LV_CLASS = 1, 2, 3

METRIC_COLUMNS = ['dice', 'jaccard', 'msd_mm', 'hd_mm', 'sensitivity', 'specificity', 'ppv', 'npv']
REGION_COLUMNS = [f'dice_{region}' for region in REGIONS]


def _pair(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError(f'Masks of shape {a.shape} and {b.shape} cannot be compared')
    return a, b


def dice(a, b):
    """2|A and B| / (|A| + |B|); 1.0 when both are empty
    """
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def jaccard(a, b):
    """|A and B| / |A or B|; 1.0 when both are empty
    """
    a, b = _pair(a, b)
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


def _ratio(numerator, denominator):
    return numerator / denominator if denominator else UNDEFINED


def confusion_rates(pred, ref):
    """Sensitivity, specificity, positive and negative predictive value of a
    predicted mask against a reference

    :rtype: tuple(float, float, float, float)
    """
    pred, ref = _pair(pred, ref)
    tp = int((pred & ref).sum())
    fp = int((pred & ~ref).sum())
    fn = int((~pred & ref).sum())
    tn = int((~pred & ~ref).sum())
    return _ratio(tp, tp + fn), _ratio(tn, tn + fp), _ratio(tp, tp + fp), _ratio(tn, tn + fn)


@dataclass
class SurfaceSet():
    """Boundary voxel centres in mm, one row per voxel"""
    points: np.ndarray

    def __len__(self):
        return len(self.points)


def surface(mask, spacing=None):
    """Foreground voxels with a background face neighbour (the grid border
    counts as background), scaled by the voxel spacing

    :rtype: SurfaceSet
    """
    mask = np.asarray(mask, dtype=bool)
    if spacing is None:
        spacing = (1.0,) * mask.ndim
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    border = mask & ~ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return SurfaceSet(np.argwhere(border) * np.asarray(spacing, dtype=np.float64))


def _nearest(source, target):
    distances, _ = cKDTree(target.points).query(source.points)
    return distances


def msd(sa, sb):
    """Mean surface distance: the average of the two mean nearest-point distances
    """
    if not len(sa) or not len(sb):
        return UNDEFINED
    return 0.5 * (_nearest(sa, sb).mean() + _nearest(sb, sa).mean())


def hausdorff(sa, sb):
    """Largest nearest-point distance in either direction
    """
    if not len(sa) or not len(sb):
        return UNDEFINED
    return float(max(_nearest(sa, sb).max(), _nearest(sb, sa).max()))


def volume_ml(mask, spacing):
    return float(np.count_nonzero(mask)) * float(np.prod(spacing)) / 1000.0


def ejection_fraction(edv_ml, esv_ml):
    if not edv_ml > 0:
        return UNDEFINED
    return (edv_ml - esv_ml) / edv_ml * 100.0


def myo_mass(myo_volume_ml):
    """Myocardial mass in grams (1 ml = 1 cm^3)
    """
    if myo_volume_ml < 0:
        raise ValueError(f'Volume must be non-negative, got {myo_volume_ml}')
    return myo_volume_ml * MYOCARDIUM_DENSITY


def pearson(xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise DimensionError(f'Sequences of length {len(xs)} and {len(ys)} cannot be paired')
    if len(xs) < 2:
        return UNDEFINED
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    denominator = math.sqrt(float((dx * dx).sum()) * float((dy * dy).sum()))
    if denominator == 0:
        return UNDEFINED
    return float(np.clip((dx * dy).sum() / denominator, -1.0, 1.0))


def bland_altman(xs, ys):
    """Bias (mean of x - y) and the half-width of the 95% limits of agreement

    :rtype: tuple(float, float)
    """
    diffs = np.asarray(xs, dtype=np.float64) - np.asarray(ys, dtype=np.float64)
    if len(diffs) < 2:
        return UNDEFINED, UNDEFINED
    return float(diffs.mean()), LOA_FACTOR * float(diffs.std(ddof=1))


_FULL_CONNECTIVITY = np.ones((3, 3, 3), dtype=bool)


def largest_cc_3d(labels):
    """Keep only the largest 26-connected component of every foreground class;
    the rest becomes background. Equal sizes keep the component met first in scan order.

    :type labels: LabelVolume or numpy.ndarray
    """
    grid = labels.labels if isinstance(labels, LabelVolume) else np.asarray(labels)
    out = grid.copy()
    structure = _FULL_CONNECTIVITY if grid.ndim == 3 else np.ones((3,) * grid.ndim, dtype=bool)
    for class_id in np.unique(grid):
        if class_id == 0:
            continue
        components, count = ndimage.label(grid == class_id, structure=structure)
        if count <= 1:
            continue
        sizes = np.bincount(components.ravel())
        sizes[0] = 0
        keep = int(sizes.argmax())
        out[(components != keep) & (components > 0)] = 0
    if isinstance(labels, LabelVolume):
        return LabelVolume(out, labels.num_classes, labels.spacing, labels.origin)
    return out


def region_split(reference):
    """Split the slices from the first to the last one holding foreground into
    apical (first quarter, rounded up), basal (last quarter, rounded up) and mid.
    A slice claimed by both ends stays apical.

    :type reference: LabelVolume or numpy.ndarray
    :return: slice indices per region, or None without foreground
    :rtype: dict
    """
    grid = reference.labels if isinstance(reference, LabelVolume) else np.asarray(reference)
    present = np.flatnonzero((grid > 0).any(axis=(0, 1)))
    if not len(present):
        return None
    span = list(range(int(present[0]), int(present[-1]) + 1))
    share = math.ceil(len(span) * REGION_SHARE)
    apical = span[:share]
    basal = [z for z in span[-share:] if z not in apical]
    mid = [z for z in span if z not in apical and z not in basal]
    return {'apical': apical, 'mid': mid, 'basal': basal}


def _grid_and_spacing(labels, spacing):
    if isinstance(labels, LabelVolume):
        return labels.labels, labels.spacing if spacing is None else spacing
    grid = np.asarray(labels)
    return grid, spacing if spacing is not None else (1.0,) * grid.ndim


def evaluate_case(pred, ref, num_classes, spacing=None, regional=False):
    """Per foreground class metrics of one predicted volume against its reference

    :return: One dict per class with ``class`` plus every metric column
    :rtype: list
    """
    pred_grid, spacing = _grid_and_spacing(pred, spacing)
    ref_grid, _ = _grid_and_spacing(ref, spacing)
    if pred_grid.shape != ref_grid.shape:
        raise DimensionError(f'Prediction {pred_grid.shape} and reference {ref_grid.shape} differ in shape')
    regions = region_split(ref_grid) if regional else None
    rows = []
    for class_id in range(1, num_classes):
        a = pred_grid == class_id
        b = ref_grid == class_id
        sa, sb = surface(a, spacing), surface(b, spacing)
        row = {'class': class_id, 'dice': dice(a, b), 'jaccard': jaccard(a, b),
               'msd_mm': msd(sa, sb), 'hd_mm': hausdorff(sa, sb)}
        row.update(zip(['sensitivity', 'specificity', 'ppv', 'npv'], confusion_rates(a, b)))
        if regional:
            for region in REGIONS:
                if regions is None or not regions[region]:
                    row[f'dice_{region}'] = UNDEFINED
                else:
                    chosen = regions[region]
                    row[f'dice_{region}'] = dice(a[..., chosen], b[..., chosen])
        rows.append(row)
    return rows


def clinical_indices(labels, spacing=None):
    """Blood-pool volumes of both ventricles and the myocardial volume and mass

    :rtype: dict
    """
    grid, spacing = _grid_and_spacing(labels, spacing)
    myo_ml = volume_ml(grid == MYO_CLASS, spacing)
    return {'lv_ml': volume_ml(grid == LV_CLASS, spacing),
            'rv_ml': volume_ml(grid == RV_CLASS, spacing),
            'myo_ml': myo_ml,
            'myo_mass_g': myo_mass(myo_ml)}


@dataclass
class EvalReport():
    """Evaluation tables of one model on one dataset

    :param cases: One row per volume and foreground class
    :param aggregate: Mean, sd and defined-value count per class and metric
    :param subgroups: Per-subgroup means per class and metric
    :param clinical: Per patient EDV, ESV, EF and myocardial mass, predicted and reference
    :param agreement: Pearson correlation and Bland-Altman bias / half-width per clinical index
    """
    cases: pd.DataFrame
    aggregate: pd.DataFrame
    subgroups: pd.DataFrame = field(default_factory=pd.DataFrame)
    clinical: pd.DataFrame = field(default_factory=pd.DataFrame)
    agreement: pd.DataFrame = field(default_factory=pd.DataFrame)

    def table(self):
        """Case rows followed by ``mean``, ``sd`` and ``n`` rows per class
        """
        return pd.concat([self.cases, self.aggregate], ignore_index=True)

    def write(self, path):
        """Write the main table to ``path`` and the clinical tables beside it
        (``<stem>_clinical.csv``, ``<stem>_agreement.csv``) when present

        :return: every path written
        :rtype: list
        """
        written = [path]
        self.table().to_csv(path, index=False, float_format='%.10g')
        stem = path[:-4] if path.endswith('.csv') else path
        for name, table in (('subgroups', self.subgroups), ('clinical', self.clinical),
                            ('agreement', self.agreement)):
            if len(table):
                target = f'{stem}_{name}.csv'
                table.to_csv(target, index=False, float_format='%.10g')
                written.append(target)
        return written


def _aggregate(cases):
    metrics = [c for c in METRIC_COLUMNS + REGION_COLUMNS if c in cases.columns]
    rows = []
    for class_id, group in cases.groupby('class', sort=True):
        values = group[metrics].astype(np.float64)
        for stat, series in (('mean', values.mean(skipna=True)), ('sd', values.std(ddof=1, skipna=True)),
                             ('n', values.notna().sum().astype(np.float64))):
            row = {'case_id': stat, 'subgroup_tag': '', 'class': class_id}
            row.update(series.to_dict())
            rows.append(row)
    return pd.DataFrame(rows, columns=['case_id', 'subgroup_tag', 'class'] + metrics)


def _clinical_table(predictions, references, phases):
    """One row per patient with both phases present"""
    rows = []
    for patient, pair in sorted(pair_phases(phases).items()):
        row = {'patient': patient}
        for source, volumes in (('pred', predictions), ('ref', references)):
            ed = clinical_indices(volumes[pair['ED']])
            es = clinical_indices(volumes[pair['ES']])
            row[f'lv_edv_{source}'] = ed['lv_ml']
            row[f'lv_esv_{source}'] = es['lv_ml']
            row[f'lv_ef_{source}'] = ejection_fraction(ed['lv_ml'], es['lv_ml'])
            row[f'rv_edv_{source}'] = ed['rv_ml']
            row[f'rv_esv_{source}'] = es['rv_ml']
            row[f'rv_ef_{source}'] = ejection_fraction(ed['rv_ml'], es['rv_ml'])
            row[f'myo_mass_{source}'] = ed['myo_mass_g']
        rows.append(row)
    return pd.DataFrame(rows)


CLINICAL_INDICES = ('lv_edv', 'lv_esv', 'lv_ef', 'rv_edv', 'rv_esv', 'rv_ef', 'myo_mass')


def _agreement_table(clinical):
    rows = []
    if not len(clinical):
        return pd.DataFrame(rows)
    for index in CLINICAL_INDICES:
        pred = clinical[f'{index}_pred'].to_numpy(dtype=np.float64)
        ref = clinical[f'{index}_ref'].to_numpy(dtype=np.float64)
        defined = ~(np.isnan(pred) | np.isnan(ref))
        bias, half_width = bland_altman(pred[defined], ref[defined])
        rows.append({'index': index, 'n': int(defined.sum()), 'pearson': pearson(pred[defined], ref[defined]),
                     'bias': bias, 'loa_half_width': half_width})
    return pd.DataFrame(rows)


def build_report(predictions, references, num_classes, tags=None, phases=None, regional=False):
    """Score every predicted volume against its reference

    :param predictions: Predicted label volume per case id
    :type predictions: dict
    :param references: Reference label volume per case id
    :type references: dict
    :param tags: Subgroup tag per case id
    :type tags: dict, optional
    :param phases: ``ED`` / ``ES`` per case id, enabling the clinical tables
    :type phases: dict, optional
    :rtype: EvalReport
    """
    tags = tags or {}
    rows = []
    for case_id in predictions:
        for row in evaluate_case(predictions[case_id], references[case_id], num_classes, regional=regional):
            rows.append({'case_id': case_id, 'subgroup_tag': tags.get(case_id, ''), **row})
    columns = ['case_id', 'subgroup_tag', 'class'] + METRIC_COLUMNS + (REGION_COLUMNS if regional else [])
    cases = pd.DataFrame(rows, columns=columns)
    metrics = columns[3:]
    subgroups = pd.DataFrame()
    if any(tags.get(case_id) for case_id in predictions):
        subgroups = cases.groupby(['subgroup_tag', 'class'], sort=True)[metrics].mean().reset_index()
    clinical = _clinical_table(predictions, references, phases) if phases else pd.DataFrame()
    report = EvalReport(cases, _aggregate(cases), subgroups, clinical, _agreement_table(clinical))
    LOGGER.info('Scored %d volumes', len(predictions))
    return report


def read_report(path):
    """Case rows of a report written by :meth:`EvalReport.write`
    """
    table = pd.read_csv(path, dtype={'case_id': str, 'subgroup_tag': str})
    table['subgroup_tag'] = table['subgroup_tag'].fillna('')
    return table[~table['case_id'].isin(['mean', 'sd', 'n'])].reset_index(drop=True)
