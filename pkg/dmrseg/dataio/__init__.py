from .volume import Volume, LabelVolume
from .nifti import read_nifti, write_nifti, parse_nifti, nifti_bytes, HEADER_DTYPE
from .preprocess import (resample_slice, crop_or_pad, normalize_intensity, augment, preprocess_case,
                         SimilarityTransform, COMMON_SPACING)
from .folds import split_folds, fold_sets, read_folds, write_folds
from .phantom import PhantomSpec, gen_phantom, gen_phantom_pair, PHASES
from .manifest import (ManifestEntry, Case, read_manifest, write_manifest, load_case, load_cases, pair_phases,
                       patient_id)
