"""Run configuration: flat ``key = value`` files with ``#`` comments.

Precedence is command-line flags, then the file, then the defaults below.
Every run writes its resolved configuration next to its outputs.
"""
import configparser
import logging
import os

from .errors import ConfigError


LOGGER = logging.getLogger(__name__)

_SECTION = 'run'

DEFAULTS = {
    # architecture
    'variant': 'unet',
    'in_channels': 1,
    'num_classes': 4,
    'stage_channels': (32, 64, 128),
    'bottleneck_channels': 256,
    'use_batchnorm': True,
    'upsampling': 'deconv',
    'dmr': False,
    # objective and optimizer
    'weighting': 'learned',
    'w1': 1.0,
    'w2': 1.0,
    'dm_threshold': 250.0,
    # unset: 0.0001 without the regularizer, 0.0005 with it
    'lr0': None,
    'lr_decay': 0.99,
    'epochs': 30,
    'batch_size': 15,
    'seed': 0,
    'dtype': 'float32',
    'augment_copies': 0,
    'cache_size': 1000,
    # data
    'manifest': '',
    'folds': '',
    'fold': 0,
    'num_folds': 5,
    'preprocess': True,
    'target_size': (256, 256),
    'out_spacing': 1.5625,
    'out_dir': 'run',
}


def _coerce(key, raw):
    default = DEFAULTS[key]
    text = raw.strip() if isinstance(raw, str) else raw
    if default is None:
        # optional reals
        if isinstance(text, str) and text.lower() in ('', 'auto'):
            return None
        try:
            return float(text)
        except (TypeError, ValueError):
            raise ConfigError(f'Invalid value {raw!r} for {key}')
    if not isinstance(text, str):
        return tuple(text) if isinstance(default, tuple) else type(default)(text)
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ('1', 'yes', 'true', 'on'):
                return True
            if lowered in ('0', 'no', 'false', 'off'):
                return False
            raise ValueError(text)
        if isinstance(default, tuple):
            return tuple(int(part) for part in text.split(',') if part.strip())
        return type(default)(text)
    except ValueError:
        raise ConfigError(f'Invalid value {raw!r} for {key}')


def _format(value):
    if value is None:
        return 'auto'
    if isinstance(value, tuple):
        return ','.join(str(v) for v in value)
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_key_values(path):
    """Raw ``key = value`` settings of a flat file, as text

    :rtype: dict
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f'Configuration {path} does not exist')
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=('#',),
                                       inline_comment_prefixes=('#',))
    parser.optionxform = str
    with open(path) as handle:
        try:
            parser.read_string(f'[{_SECTION}]\n' + handle.read(), source=str(path))
        except configparser.Error as x:
            raise ConfigError(f'Cannot parse {path}: {x}')
    LOGGER.debug('Read %d settings from %s', len(parser[_SECTION]), path)
    return dict(parser[_SECTION])


class RunConfig():

    """Resolved run settings

    :param values: Settings that differ from the defaults
    :type values: dict, optional
    """

    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        if values:
            self.update(values)

    def __getattr__(self, name):
        values = self.__dict__.get('values', {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def __getitem__(self, key):
        return self.values[key]

    def update(self, values):
        """Apply overrides; None values (flags not given) are skipped
        """
        for key, value in values.items():
            if key not in DEFAULTS:
                raise ConfigError(f'Unknown configuration key {key}')
            if value is not None:
                self.values[key] = _coerce(key, value)
        return self

    @classmethod
    def from_file(cls, path, overrides=None):
        config = cls(read_key_values(path))
        if overrides:
            config.update(overrides)
        return config

    def to_text(self, comments=()):
        header = ''.join(f'# {line}\n' for line in comments)
        return header + ''.join(f'{key} = {_format(self.values[key])}\n' for key in sorted(self.values))

    def write(self, path, comments=()):
        with open(path, 'w') as handle:
            handle.write(self.to_text(comments))


def write_config(config, directory, name='resolved_config.txt', comments=()):
    """Persist the fully resolved configuration (sorted keys) into ``directory``

    :param comments: Lines written first as ``#`` comments, e.g. the command arguments
    :type comments: list of str, optional
    :return: Path of the written file
    """
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, name)
    config.write(path, comments)
    return path


def worker_count():
    """Worker threads allowed by ``DMRSEG_THREADS``, defaulting to the CPU count
    """
    raw = os.environ.get('DMRSEG_THREADS')
    if raw is None:
        return os.cpu_count() or 1
    try:
        count = int(raw)
    except ValueError:
        raise ConfigError(f'DMRSEG_THREADS must be an integer, got {raw!r}')
    if count < 1:
        raise ConfigError(f'DMRSEG_THREADS must be at least 1, got {count}')
    return count
