import json
import logging
import zipfile
from dataclasses import dataclass, asdict, replace, field

import numpy as np

from ..autograd import Tensor, no_grad, maxpool2x2_with_indices
from ..dataio.volume import Volume, LabelVolume
from ..errors import DimensionError, UsageError, ConfigError
from .blocks import ParamGroup
from .wiring import WIRINGS, Regularizer


LOGGER = logging.getLogger(__name__)

FORMAT_VERSION = 1
POOLING_STAGES = 3
GROUPS = ('encoder', 'seg_decoder', 'dmr_decoder')

_HEADER_ENTRIES = ('__format_version__', '__archspec__', '__meta__')
_ZIP_TIMESTAMP = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class ArchSpec():
    """Architecture of one network variant.

    :param variant: ``segnet``, ``usegnet`` or ``unet``; fixes the decoder wiring
    :type variant: str
    :param stage_channels: Widths of the three pooling stages, strictly increasing
    :type stage_channels: tuple
    :param bottleneck_channels: Width of the bottleneck between encoder and decoders
    :type bottleneck_channels: int
    :param dmr_attached: Whether the distance-map regularizer decoder is present
    :type dmr_attached: bool
    :param dm_threshold: Truncation distance of the regression targets, pixels
    :type dm_threshold: float
    :param upsampling: ``deconv`` or ``nearest``, used by the U-Net wiring only
    :type upsampling: str
    """
    variant: str = 'unet'
    in_channels: int = 1
    num_classes: int = 4
    stage_channels: tuple = field(default=(32, 64, 128))
    bottleneck_channels: int = 256
    use_batchnorm: bool = True
    dmr_attached: bool = False
    dm_threshold: float = 250.0
    upsampling: str = 'deconv'

    def __post_init__(self):
        object.__setattr__(self, 'stage_channels', tuple(int(c) for c in self.stage_channels))

    @property
    def wiring(self):
        return WIRINGS[self.variant]

    def validate(self):
        if self.variant not in WIRINGS:
            raise ConfigError(f'Unknown variant {self.variant}; expected one of {sorted(WIRINGS)}')
        if self.upsampling not in ('deconv', 'nearest'):
            raise ConfigError(f'Unknown upsampling {self.upsampling}')
        if len(self.stage_channels) != POOLING_STAGES:
            raise ConfigError(f'Expected {POOLING_STAGES} stage widths, got {self.stage_channels}')
        widths = self.stage_channels + (self.bottleneck_channels,)
        if any(a >= b for a, b in zip(widths, widths[1:])) or widths[0] < 1:
            raise ConfigError(f'Stage widths must be positive and strictly increasing, got {widths}')
        if self.in_channels < 1 or self.num_classes < 2:
            raise ConfigError('Need at least one input channel and two classes')
        if self.dm_threshold <= 0:
            raise ConfigError(f'Distance threshold must be positive, got {self.dm_threshold}')
        return self

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


class ModelParams():

    """Learnable parameters of one architecture, grouped into ``encoder``,
    ``seg_decoder`` and, while the regularizer is attached, ``dmr_decoder``.

    :param spec: The architecture the groups were built for
    :type spec: ArchSpec
    :param groups: Parameter groups keyed by name
    :type groups: dict
    """

    def __init__(self, spec, groups):
        if ('dmr_decoder' in groups) != spec.dmr_attached:
            raise UsageError('The dmr_decoder group must be present exactly when the regularizer is attached')
        self.spec = spec
        self.groups = dict(groups)

    def __repr__(self):
        return f'ModelParams({self.spec.variant}, dmr={self.dmr_attached}, {count_parameters(self)} parameters)'

    @property
    def dtype(self):
        return self.groups['encoder'].dtype

    @property
    def dmr_attached(self):
        return self.spec.dmr_attached

    def parameters(self, group=None):
        if group is not None:
            return self.groups[group].tensors() if group in self.groups else []
        return [t for name in GROUPS if name in self.groups for t in self.groups[name].tensors()]

    def named_arrays(self):
        for name in GROUPS:
            if name in self.groups:
                yield from self.groups[name].named_arrays()

    def copy(self):
        return ModelParams(self.spec, {name: group.copy() for name, group in self.groups.items()})


@dataclass
class EncoderOutput():
    skips: list
    indices: list
    bottleneck: Tensor


@dataclass
class ForwardOutput():
    logits: Tensor
    dm_pred: Tensor = None


def _build_regularizer(spec, seed, dtype):
    group = ParamGroup('dmr_decoder', dtype)
    Regularizer.build(group, spec, spec.num_classes - 1, np.random.default_rng([seed, 2]))
    return group


def build_model(spec, seed=0, dtype=np.float64):
    """Initialize an architecture. Kernels are Kaiming uniform, biases and
    batchnorm betas zero, gammas one.

    Each group draws from its own stream derived from ``seed``, so a model built
    with the regularizer attached shares its encoder and segmentation decoder
    with the baseline built from the same seed.

    :param spec: Architecture to build
    :type spec: ArchSpec
    :param seed: Initialization seed
    :type seed: int
    :param dtype: Floating dtype of every parameter
    :type dtype: numpy.dtype
    :rtype: ModelParams
    """
    spec.validate()
    encoder = ParamGroup('encoder', dtype)
    rng = np.random.default_rng([seed, 0])
    in_channels = spec.in_channels
    for level, channels in enumerate(spec.stage_channels, 1):
        encoder.add_conv_unit(f'stage{level}.conv1', in_channels, channels, rng, spec.use_batchnorm)
        encoder.add_conv_unit(f'stage{level}.conv2', channels, channels, rng, spec.use_batchnorm)
        in_channels = channels
    encoder.add_conv_unit('bottleneck.conv1', in_channels, spec.bottleneck_channels, rng, spec.use_batchnorm)
    encoder.add_conv_unit('bottleneck.conv2', spec.bottleneck_channels, spec.bottleneck_channels, rng,
                          spec.use_batchnorm)

    seg_decoder = ParamGroup('seg_decoder', dtype)
    spec.wiring.build(seg_decoder, spec, spec.num_classes, np.random.default_rng([seed, 1]))

    groups = {'encoder': encoder, 'seg_decoder': seg_decoder}
    if spec.dmr_attached:
        groups['dmr_decoder'] = _build_regularizer(spec, seed, dtype)
    params = ModelParams(spec, groups)
    LOGGER.debug('Built %s', params)
    return params


def count_parameters(params, group=None):
    if group is not None:
        return params.groups[group].count() if group in params.groups else 0
    return sum(g.count() for g in params.groups.values())


def detach_regularizer(params):
    """Drop the distance-map decoder. The encoder and segmentation decoder are
    shared with ``params`` unchanged.

    :rtype: ModelParams
    """
    if not params.dmr_attached:
        raise UsageError('The regularizer is already detached')
    groups = {name: group for name, group in params.groups.items() if name != 'dmr_decoder'}
    return ModelParams(replace(params.spec, dmr_attached=False), groups)


def attach_regularizer(params, seed=0):
    """Add a freshly initialized distance-map decoder

    :rtype: ModelParams
    """
    if params.dmr_attached:
        raise UsageError('The regularizer is already attached')
    spec = replace(params.spec, dmr_attached=True)
    groups = dict(params.groups)
    groups['dmr_decoder'] = _build_regularizer(spec, seed, params.dtype)
    return ModelParams(spec, groups)


def _as_input(params, image):
    if not isinstance(image, Tensor):
        image = Tensor(np.asarray(image), dtype=params.dtype)
    if image.ndim != 4:
        raise DimensionError(f'Expected a B x {params.spec.in_channels} x H x W image, got {image.shape}')
    factor = 2 ** len(params.spec.stage_channels)
    batch, channels, height, width = image.shape
    if channels != params.spec.in_channels:
        raise DimensionError(f'Model expects {params.spec.in_channels} input channels, got {channels}')
    if height % factor or width % factor:
        raise DimensionError(f'Spatial extents must be divisible by {factor}, got {height}x{width}')
    return image


def encode(params, image, mode='train'):
    """Run the encoder: per-stage pre-pool activations, pooling indices and bottleneck

    :rtype: EncoderOutput
    """
    x = _as_input(params, image)
    encoder = params.groups['encoder']
    skips, indices = [], []
    for level in range(1, len(params.spec.stage_channels) + 1):
        x = encoder.conv_unit(f'stage{level}.conv1', x, mode)
        x = encoder.conv_unit(f'stage{level}.conv2', x, mode)
        skips.append(x)
        x, pool_indices = maxpool2x2_with_indices(x)
        indices.append(pool_indices)
    x = encoder.conv_unit('bottleneck.conv1', x, mode)
    x = encoder.conv_unit('bottleneck.conv2', x, mode)
    return EncoderOutput(skips, indices, x)


def decode_segmentation(params, encoded, mode='train'):
    return params.spec.wiring.decode(params.groups['seg_decoder'], encoded, mode)


def decode_distance_maps(params, encoded, mode='train'):
    if not params.dmr_attached:
        raise UsageError('The model has no regularizer decoder')
    return Regularizer.decode(params.groups['dmr_decoder'], encoded, mode)


def forward(params, image, mode='train'):
    """Segmentation logits and, with the regularizer attached, C - 1 distance-map channels

    :param image: B x in_channels x H x W with H, W divisible by 8
    :type image: Tensor or numpy.ndarray
    :param mode: ``train`` updates batchnorm running statistics, ``eval`` uses them
    :type mode: str
    :rtype: ForwardOutput
    """
    encoded = encode(params, image, mode)
    logits = decode_segmentation(params, encoded, mode)
    dm_pred = decode_distance_maps(params, encoded, mode) if params.dmr_attached else None
    return ForwardOutput(logits, dm_pred)


def _slice_outputs(params, voxels, batch_size, distance_maps=False):
    slices = np.moveaxis(np.asarray(voxels), 2, 0)[:, None].astype(params.dtype)
    outputs = []
    with no_grad():
        for start in range(0, len(slices), batch_size):
            out = forward(params, Tensor(slices[start:start + batch_size]), 'eval')
            outputs.append((out.dm_pred if distance_maps else out.logits).data)
    return np.concatenate(outputs)


def predict_logits(params, voxels, batch_size=8):
    """Eval-mode logits of every slice of an H x W x D grid, as D x C x H x W
    """
    return _slice_outputs(params, voxels, batch_size)


def predict_labels(params, volume, batch_size=8):
    """Slice-wise argmax segmentation of a preprocessed volume; ties go to the lower class id

    :param volume: A volume or a bare H x W x D array
    :type volume: Volume or numpy.ndarray
    :rtype: LabelVolume (numpy.ndarray for array input)
    """
    voxels = volume.voxels if isinstance(volume, Volume) else volume
    labels = predict_logits(params, voxels, batch_size).argmax(axis=1).transpose(1, 2, 0)
    if isinstance(volume, Volume):
        return LabelVolume(labels, params.spec.num_classes, volume.spacing, volume.origin)
    return labels


def predict_distance_maps(params, volume, batch_size=8):
    """Regressed distance maps of every slice, as (C - 1) x H x W x D
    """
    if not params.dmr_attached:
        raise UsageError('Distance maps need the regularizer decoder')
    voxels = volume.voxels if isinstance(volume, Volume) else volume
    return _slice_outputs(params, voxels, batch_size, distance_maps=True).transpose(1, 2, 3, 0)


def save_checkpoint(params, path, meta=None):
    """Write a ``.npz`` container: format version, architecture JSON, run
    metadata JSON and every parameter and running statistic as little-endian
    float32. Member order and timestamps are fixed, so equal models give equal bytes.
    """
    entries = [('__format_version__', np.array(FORMAT_VERSION, dtype='<i4')),
               ('__archspec__', np.array(params.spec.to_json())),
               ('__meta__', np.array(json.dumps(meta or {}, sort_keys=True)))]
    entries += [(name, np.asarray(values, dtype='<f4')) for name, values in params.named_arrays()]
    with zipfile.ZipFile(path, 'w', compression=zipfile.ZIP_STORED) as archive:
        for name, array in entries:
            info = zipfile.ZipInfo(f'{name}.npy', date_time=_ZIP_TIMESTAMP)
            with archive.open(info, 'w') as member:
                np.lib.format.write_array(member, array, allow_pickle=False)
    LOGGER.debug('Saved %d arrays to %s', len(entries), path)


def load_checkpoint(path, dtype=np.float32):
    """Read a checkpoint written by :func:`save_checkpoint`

    :return: the parameters and the run metadata
    :rtype: tuple(ModelParams, dict)
    """
    with np.load(path, allow_pickle=False) as archive:
        files = set(archive.files)
        if not set(_HEADER_ENTRIES) <= files:
            raise ValueError(f'{path} is not a dmrseg checkpoint')
        version = int(archive['__format_version__'])
        if version != FORMAT_VERSION:
            raise ValueError(f'Unsupported checkpoint format version {version}')
        spec = ArchSpec.from_json(str(archive['__archspec__']))
        meta = json.loads(str(archive['__meta__']))
        params = build_model(spec, seed=0, dtype=dtype)
        expected = {name for name, _ in params.named_arrays()}
        stored = files - set(_HEADER_ENTRIES)
        if expected != stored:
            missing = sorted(expected - stored)
            unexpected = sorted(stored - expected)
            raise ValueError(f'Checkpoint does not match its architecture: missing {missing[:3]}, '
                             f'unexpected {unexpected[:3]}')
        for name in sorted(stored):
            group, entry = name.split('.', 1)
            params.groups[group].assign(entry, archive[name])
    return params, meta
