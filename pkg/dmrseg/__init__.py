from .errors import (DimensionError, LabelError, UsageError, PoolIndexError, PhantomSpecError, ConfigError,
                     NiftiParseError, NonFiniteLossError)
from .distmap import (DistanceMapStack, edt, squared_edt, boundary_pixels, signed_truncated_dm, dm_stack,
                      segmentation_from_dm, dm_volume)
from .networks import (ArchSpec, ModelParams, build_model, forward, detach_regularizer, attach_regularizer,
                       count_parameters, predict_labels, predict_distance_maps, save_checkpoint, load_checkpoint,
                       SegNet, USegNet, UNet)
from .mtl import TaskWeights, joint_loss, fixed_loss, LearnedWeighting, FixedWeighting, EqualWeights
from .trainer import TrainConfig, Checkpoint, train, validate, finalize, lr_at, rmsprop_step, configure_cache_size
from .dataio import Volume, LabelVolume, read_nifti, write_nifti, PhantomSpec, gen_phantom, read_manifest
from .metrics import (dice, jaccard, msd, hausdorff, surface, ejection_fraction, myo_mass, pearson, bland_altman,
                      largest_cc_3d, build_report, EvalReport)
from .stats import bootstrap_ci, paired_wilcoxon, compare_reports
from .config import RunConfig
