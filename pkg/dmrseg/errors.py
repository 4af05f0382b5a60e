"""Exception types raised by dmrseg.

Each one subclasses a builtin family so callers may catch either the specific
class or the builtin (``ValueError``, ``LookupError``, ...).
"""


class DimensionError(ValueError):
    """Array extents are incompatible with the requested operation"""


class LabelError(LookupError):
    """A label or class id lies outside the declared label set"""


class UsageError(RuntimeError):
    """An API was called in a state that does not allow it"""


class PoolIndexError(IndexError):
    """Pooling indices do not address a position inside their 2x2 window"""


class PhantomSpecError(ValueError):
    """Phantom geometry cannot satisfy the ring-encloses-disk layout"""


class ConfigError(ValueError):
    """Unknown key or malformed value in a run configuration"""


class NiftiParseError(ValueError):
    """A NIfTI-1 file was rejected by the reader

    :param message: Human-readable reason
    :type message: str
    :param field: Name of the offending header field
    :type field: str
    :param offset: Byte offset of that field in the file
    :type offset: int
    """

    def __init__(self, message, field, offset):
        super().__init__(f'{message} (field {field} at byte {offset})')
        self.field = field
        self.offset = offset


class NonFiniteLossError(FloatingPointError):
    """Training produced a NaN or infinite loss or gradient"""

    def __init__(self, epoch, step, ce, mad, loss):
        super().__init__(f'Non-finite loss at epoch {epoch}, step {step}: '
                         f'ce={ce}, mad={mad}, total={loss}')
        self.epoch = epoch
        self.step = step
        self.ce = ce
        self.mad = mad
        self.loss = loss
