"""Reader and writer for the single-file NIfTI-1 subset used by the pipeline:
magic ``n+1``, uint8 / int16 / float32 payloads, up to three spatial axes
(a fourth axis of extent 1 is accepted), either byte order.
"""
import logging

import numpy as np

from .volume import Volume, LabelVolume
from ..errors import NiftiParseError


LOGGER = logging.getLogger(__name__)

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b'n+1'

HEADER_DTYPE = np.dtype([
    ('sizeof_hdr', 'i4'),
    ('data_type', 'S10'),
    ('db_name', 'S18'),
    ('extents', 'i4'),
    ('session_error', 'i2'),
    ('regular', 'S1'),
    ('dim_info', 'u1'),
    ('dim', 'i2', (8,)),
    ('intent_p1', 'f4'),
    ('intent_p2', 'f4'),
    ('intent_p3', 'f4'),
    ('intent_code', 'i2'),
    ('datatype', 'i2'),
    ('bitpix', 'i2'),
    ('slice_start', 'i2'),
    ('pixdim', 'f4', (8,)),
    ('vox_offset', 'f4'),
    ('scl_slope', 'f4'),
    ('scl_inter', 'f4'),
    ('slice_end', 'i2'),
    ('slice_code', 'u1'),
    ('xyzt_units', 'u1'),
    ('cal_max', 'f4'),
    ('cal_min', 'f4'),
    ('slice_duration', 'f4'),
    ('toffset', 'f4'),
    ('glmax', 'i4'),
    ('glmin', 'i4'),
    ('descrip', 'S80'),
    ('aux_file', 'S24'),
    ('qform_code', 'i2'),
    ('sform_code', 'i2'),
    ('quatern_b', 'f4'),
    ('quatern_c', 'f4'),
    ('quatern_d', 'f4'),
    ('qoffset_x', 'f4'),
    ('qoffset_y', 'f4'),
    ('qoffset_z', 'f4'),
    ('srow_x', 'f4', (4,)),
    ('srow_y', 'f4', (4,)),
    ('srow_z', 'f4', (4,)),
    ('intent_name', 'S16'),
    ('magic', 'S4'),
])

# NIfTI datatype code -> payload type
DATATYPES = {2: np.dtype(np.uint8), 4: np.dtype(np.int16), 16: np.dtype(np.float32)}
DATATYPE_CODES = {dtype.name: code for code, dtype in DATATYPES.items()}

XYZT_MM = 2


def field_offset(name):
    return HEADER_DTYPE.fields[name][1]


def _fail(message, field):
    raise NiftiParseError(message, field, field_offset(field))


def nifti_bytes(voxels, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), datatype='float32',
                endian='<', slope=0.0, inter=0.0):
    """Serialize a 3-D grid as a single-file NIfTI-1 image

    :param voxels: H x W x D grid, written fastest-varying axis first
    :param datatype: ``uint8``, ``int16`` or ``float32``
    :param endian: ``<`` or ``>``
    :param slope: ``scl_slope``; 0 disables scaling
    :rtype: bytes
    """
    voxels = np.asarray(voxels)
    if voxels.ndim != 3:
        raise ValueError(f'Expected a 3-D grid, got shape {voxels.shape}')
    code = DATATYPE_CODES[datatype]
    header = np.zeros((), dtype=HEADER_DTYPE.newbyteorder(endian))
    header['sizeof_hdr'] = HEADER_SIZE
    header['dim'] = (3,) + voxels.shape + (1, 1, 1, 1)
    header['datatype'] = code
    header['bitpix'] = DATATYPES[code].itemsize * 8
    header['pixdim'] = (1.0,) + tuple(spacing) + (0.0, 0.0, 0.0, 0.0)
    header['vox_offset'] = VOX_OFFSET
    header['scl_slope'] = slope
    header['scl_inter'] = inter
    header['xyzt_units'] = XYZT_MM
    header['qoffset_x'], header['qoffset_y'], header['qoffset_z'] = origin
    header['magic'] = MAGIC
    payload = voxels.astype(DATATYPES[code].newbyteorder(endian)).tobytes(order='F')
    return header.tobytes() + bytes(VOX_OFFSET - HEADER_SIZE) + payload


def write_nifti(volume, path):
    """Write a volume (or label volume) as float32 with scaling disabled.
    Identical input gives identical bytes.
    """
    voxels = volume.labels if isinstance(volume, LabelVolume) else volume.voxels
    with open(path, 'wb') as handle:
        handle.write(nifti_bytes(voxels, volume.spacing, volume.origin))
    LOGGER.debug('Wrote %s %s', voxels.shape, path)


def parse_nifti(data):
    """Decode NIfTI-1 bytes

    :return: voxel grid (H x W x D), spacing and origin
    :rtype: tuple(numpy.ndarray, tuple, tuple)
    """
    if len(data) < HEADER_SIZE:
        _fail(f'Truncated header: {len(data)} bytes', 'sizeof_hdr')
    if int.from_bytes(data[:4], 'little') == HEADER_SIZE:
        endian = '<'
    elif int.from_bytes(data[:4], 'big') == HEADER_SIZE:
        endian = '>'
    else:
        _fail('sizeof_hdr is not 348 in either byte order', 'sizeof_hdr')
    header = np.frombuffer(data[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder(endian))[0]

    if header['magic'] != MAGIC:
        _fail(f'Unsupported magic {header["magic"]!r}', 'magic')

    dim = [int(d) for d in header['dim']]
    ndim = dim[0]
    if not 1 <= ndim <= 4 or any(d < 1 for d in dim[1:ndim + 1]):
        _fail(f'Invalid dim {dim}', 'dim')
    if ndim == 4 and dim[4] != 1:
        _fail(f'Time series with {dim[4]} frames are not supported', 'dim')
    shape = tuple(dim[1:min(ndim, 3) + 1])
    shape = shape + (1,) * (3 - len(shape))

    code = int(header['datatype'])
    if code not in DATATYPES:
        _fail(f'Unsupported datatype {code}', 'datatype')
    dtype = DATATYPES[code].newbyteorder(endian)
    if int(header['bitpix']) != dtype.itemsize * 8:
        _fail(f'bitpix {header["bitpix"]} does not match datatype {code}', 'bitpix')

    pixdim = [float(p) for p in header['pixdim']]
    spacing = []
    for axis in range(3):
        if axis < ndim:
            if not pixdim[axis + 1] > 0:
                _fail(f'Non-positive spacing {pixdim[axis + 1]} on axis {axis}', 'pixdim')
            spacing.append(pixdim[axis + 1])
        else:
            spacing.append(1.0)

    offset = float(header['vox_offset'])
    if offset < HEADER_SIZE or offset != int(offset):
        _fail(f'Invalid vox_offset {offset}', 'vox_offset')
    offset = int(offset)
    count = int(np.prod(shape))
    if len(data) < offset + count * dtype.itemsize:
        _fail(f'Truncated payload: {len(data) - offset} of {count * dtype.itemsize} bytes', 'vox_offset')
    voxels = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape, order='F')

    slope = float(header['scl_slope'])
    if slope != 0 and np.isfinite(slope):
        voxels = voxels.astype(np.float64) * slope + float(header['scl_inter'])
    else:
        voxels = voxels.astype(dtype.newbyteorder('='))
    origin = (float(header['qoffset_x']), float(header['qoffset_y']), float(header['qoffset_z']))
    return voxels, tuple(spacing), origin


def read_nifti(path, labels=False, num_classes=None):
    """Read a NIfTI-1 file

    :param labels: Return a label volume instead of an intensity volume
    :type labels: bool
    :param num_classes: Size of the label set, defaults to the largest label + 1
    :type num_classes: int, optional
    :rtype: Volume or LabelVolume
    """
    with open(path, 'rb') as handle:
        data = handle.read()
    voxels, spacing, origin = parse_nifti(data)
    if labels:
        if num_classes is None:
            num_classes = int(voxels.max()) + 1 if voxels.size else 1
        return LabelVolume(voxels, num_classes, spacing, origin)
    return Volume(voxels.astype(np.float64), spacing, origin)
