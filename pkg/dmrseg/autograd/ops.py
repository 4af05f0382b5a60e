"""Differentiable operators used by the segmentation networks and their losses.

All operators take and return :class:`Tensor` objects laid out as
batch x channel x height x width and record themselves on the current tape.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, record
from ..errors import DimensionError, LabelError, PoolIndexError


__all__ = ['conv2d', 'conv_transpose2d', 'PoolIndices', 'maxpool2x2_with_indices', 'max_unpool2x2',
           'upsample_nearest2x', 'concat_channels', 'relu', 'RunningStats', 'batchnorm2d',
           'softmax_channels', 'cross_entropy_loss', 'mad_loss']

BATCHNORM_EPS = 1e-5
BATCHNORM_MOMENTUM = 0.1


def _check_4d(tensor, name):
    if tensor.ndim != 4:
        raise DimensionError(f'{name} must be 4-D (batch, channel, height, width), got shape {tensor.shape}')


def _windows(padded, k, stride, out_h, out_w):
    # (B, C, out_h, out_w, k, k) view of the k x k windows read by a strided correlation
    view = sliding_window_view(padded, (k, k), axis=(2, 3))
    return view[:, :, ::stride, ::stride][:, :, :out_h, :out_w]


def _correlate(padded, kernel, stride, out_h, out_w):
    windows = _windows(padded, kernel.shape[2], stride, out_h, out_w)
    out = np.tensordot(windows, kernel, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _scatter(columns, stride, padded_shape):
    """Adjoint of :func:`_windows`: add every window entry back onto the grid
    """
    out = np.zeros(padded_shape, dtype=columns.dtype)
    k = columns.shape[-1]
    out_h, out_w = columns.shape[2:4]
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * (out_h - 1) + 1:stride,
                j:j + stride * (out_w - 1) + 1:stride] += columns[..., i, j]
    return out


def _pad(array, padding):
    if padding == 0:
        return array
    return np.pad(array, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _crop(array, padding):
    if padding == 0:
        return array
    return array[:, :, padding:-padding, padding:-padding]


def conv2d(input, kernel, bias=None, padding=0, stride=1):
    """Cross-correlate a batch of images with a bank of kernels (no kernel flip).

    :param input: B x Cin x H x W
    :type input: Tensor
    :param kernel: Cout x Cin x K x K with K odd
    :type kernel: Tensor
    :param bias: Cout values added per output channel, defaults to None
    :type bias: Tensor, optional
    :param padding: Zero padding on every side, defaults to 0
    :type padding: int, optional
    :param stride: Step between windows, defaults to 1
    :type stride: int, optional

    :return: B x Cout x H' x W' with H' = (H + 2 padding - K) / stride + 1
    :rtype: Tensor
    """
    _check_4d(input, 'input')
    _check_4d(kernel, 'kernel')
    out_channels, in_channels, k, k_w = kernel.shape
    if k != k_w or k % 2 == 0:
        raise DimensionError(f'Kernel must be square with an odd extent, got {k}x{k_w}')
    if padding < 0 or stride < 1:
        raise DimensionError(f'Invalid padding {padding} or stride {stride}')
    batch, channels, height, width = input.shape
    if channels != in_channels:
        raise DimensionError(f'Input has {channels} channels but the kernel expects {in_channels}')
    span_h, span_w = height + 2 * padding - k, width + 2 * padding - k
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise DimensionError(f'Extent {height}x{width} with padding {padding} does not tile '
                             f'kernel {k} at stride {stride}')
    out_h, out_w = span_h // stride + 1, span_w // stride + 1

    padded = _pad(input.data, padding)
    w = kernel.data
    out = _correlate(padded, w, stride, out_h, out_w)
    operands = (input, kernel)
    if bias is not None:
        if bias.shape != (out_channels,):
            raise DimensionError(f'Bias must have shape ({out_channels},), got {bias.shape}')
        out = out + bias.data[None, :, None, None]
        operands = (input, kernel, bias)

    def backward(grad):
        windows = _windows(padded, k, stride, out_h, out_w)
        grad_kernel = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        columns = np.tensordot(grad, w, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        grad_input = _crop(_scatter(columns, stride, padded.shape), padding)
        if bias is None:
            return grad_input, grad_kernel
        return grad_input, grad_kernel, grad.sum(axis=(0, 2, 3))

    return record(out, operands, backward)


def conv_transpose2d(input, kernel, bias=None, stride=1, padding=0):
    """Adjoint of :func:`conv2d` with respect to its input (a "deconvolution").

    The kernel uses the conv2d layout of the operator being transposed, so
    ``input`` has ``kernel.shape[0]`` channels and the output has
    ``kernel.shape[1]``. For matching stride and padding,
    ``<conv2d(x, k), y> == <x, conv_transpose2d(y, k)>``.

    :rtype: Tensor
    """
    _check_4d(input, 'input')
    _check_4d(kernel, 'kernel')
    if stride < 1 or padding < 0:
        raise DimensionError(f'Invalid stride {stride} or padding {padding}')
    in_channels, out_channels, k, _ = kernel.shape
    batch, channels, height, width = input.shape
    if channels != in_channels:
        raise DimensionError(f'Input has {channels} channels but the kernel expects {in_channels}')
    padded_shape = (batch, out_channels, (height - 1) * stride + k, (width - 1) * stride + k)
    if padded_shape[2] <= 2 * padding or padded_shape[3] <= 2 * padding:
        raise DimensionError(f'Padding {padding} removes the whole output')

    w = kernel.data
    y = input.data
    columns = np.tensordot(y, w, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    out = _crop(_scatter(columns, stride, padded_shape), padding)
    operands = (input, kernel)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
        operands = (input, kernel, bias)

    def backward(grad):
        windows = _windows(_pad(grad, padding), k, stride, height, width)
        grad_input = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        grad_kernel = np.tensordot(y, windows, axes=([0, 2, 3], [0, 2, 3]))
        if bias is None:
            return grad_input, grad_kernel
        return grad_input, grad_kernel, grad.sum(axis=(0, 2, 3))

    return record(out, operands, backward)


@dataclass(frozen=True)
class PoolIndices():
    """Argmax position of every 2x2 pooling window, stored as the flat offset
    (0..3, row-major) inside the window, plus the shape of the pooled input.
    """
    offsets: np.ndarray
    input_shape: tuple

    def validate(self):
        if self.offsets.size and (self.offsets.min() < 0 or self.offsets.max() > 3):
            raise PoolIndexError('Pooling index addresses a position outside its 2x2 window')
        batch, channels, height, width = self.input_shape
        if self.offsets.shape != (batch, channels, height // 2, width // 2):
            raise PoolIndexError(f'Indices of shape {self.offsets.shape} do not describe '
                                 f'a pooling of {self.input_shape}')


def _to_windows(array):
    b, c, h, w = array.shape
    return array.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)


def _from_windows(windows):
    b, c, h2, w2, _ = windows.shape
    return windows.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * h2, 2 * w2)


def _place(values, offsets):
    b, c, h2, w2 = values.shape
    windows = np.zeros((b, c, h2, w2, 4), dtype=values.dtype)
    np.put_along_axis(windows, offsets[..., None].astype(np.intp), values[..., None], axis=-1)
    return _from_windows(windows)


def maxpool2x2_with_indices(input):
    """Non-overlapping 2x2 max pooling that also returns the argmax offsets.
    Ties resolve to the lowest offset.

    :return: pooled tensor and the indices needed to unpool it
    :rtype: tuple(Tensor, PoolIndices)
    """
    _check_4d(input, 'input')
    height, width = input.shape[2:]
    if height % 2 or width % 2:
        raise DimensionError(f'Max pooling needs even spatial extents, got {height}x{width}')
    windows = _to_windows(input.data)
    offsets = windows.argmax(axis=-1).astype(np.int8)
    pooled = np.take_along_axis(windows, offsets[..., None].astype(np.intp), axis=-1)[..., 0]
    indices = PoolIndices(offsets, input.shape)
    return record(pooled, (input,), lambda g: (_place(g, offsets),)), indices


def max_unpool2x2(input, indices):
    """Place every value at its recorded argmax position; all other positions are zero.

    :rtype: Tensor
    """
    _check_4d(input, 'input')
    indices.validate()
    if input.shape != indices.offsets.shape:
        raise DimensionError(f'Cannot unpool {input.shape} with indices for {indices.offsets.shape}')
    offsets = indices.offsets
    out = _place(input.data, offsets)

    def backward(grad):
        return (np.take_along_axis(_to_windows(grad), offsets[..., None].astype(np.intp), axis=-1)[..., 0],)

    return record(out, (input,), backward)


def upsample_nearest2x(input):
    _check_4d(input, 'input')
    out = input.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(grad):
        b, c, h, w = grad.shape
        return (grad.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)

    return record(out, (input,), backward)


def concat_channels(a, b):
    """Stack ``b``'s channels after ``a``'s.
    """
    _check_4d(a, 'a')
    _check_4d(b, 'b')
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DimensionError(f'Cannot concatenate {a.shape} and {b.shape} along channels')
    split = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return record(out, (a, b), lambda g: (g[:, :split], g[:, split:]))


def relu(input):
    # NaN passes through
    mask = input.data > 0
    return record(np.maximum(input.data, 0), (input,), lambda g: (g * mask,))


class RunningStats():

    """Per-channel running mean and variance of a batchnorm layer

    :param channels: Number of channels
    :type channels: int
    """

    def __init__(self, channels, dtype=np.float64):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def update(self, mean, var):
        self.mean = (1 - BATCHNORM_MOMENTUM) * self.mean + BATCHNORM_MOMENTUM * mean
        self.var = (1 - BATCHNORM_MOMENTUM) * self.var + BATCHNORM_MOMENTUM * var


def batchnorm2d(input, gamma, beta, state, mode='train'):
    """Per-channel normalization followed by an affine map.

    In ``train`` mode the batch statistics normalize the input and the running
    statistics in ``state`` move toward them (momentum 0.1, unbiased variance);
    in ``eval`` mode the running statistics are used as they are.

    :param state: Running statistics owned by the layer
    :type state: RunningStats
    :param mode: ``train`` or ``eval``
    :type mode: str
    :rtype: Tensor
    """
    _check_4d(input, 'input')
    x = input.data
    g = gamma.data[None, :, None, None]
    b = beta.data[None, :, None, None]
    axes = (0, 2, 3)
    count = x.shape[0] * x.shape[2] * x.shape[3]

    if mode == 'train':
        if count < 2:
            raise DimensionError('Batchnorm in train mode needs at least two values per channel')
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        state.update(mean, var * count / (count - 1))
    elif mode == 'eval':
        mean, var = state.mean.astype(x.dtype), state.var.astype(x.dtype)
    else:
        raise ValueError(f'Unknown batchnorm mode {mode}')

    inv_std = 1.0 / np.sqrt(var + BATCHNORM_EPS)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = g * x_hat + b

    def backward(grad):
        grad_gamma = (grad * x_hat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        grad_hat = grad * g
        if mode == 'train':
            grad_input = (inv_std[None, :, None, None] / count) * (
                count * grad_hat
                - grad_hat.sum(axis=axes, keepdims=True)
                - x_hat * (grad_hat * x_hat).sum(axis=axes, keepdims=True))
        else:
            grad_input = grad_hat * inv_std[None, :, None, None]
        return grad_input, grad_gamma, grad_beta

    return record(out, (input, gamma, beta), backward)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_channels(logits):
    """Per-pixel softmax over the channel axis, computed after subtracting the channel maximum
    """
    _check_4d(logits, 'logits')
    probs = np.exp(_log_softmax(logits.data))

    def backward(grad):
        return (probs * (grad - (grad * probs).sum(axis=1, keepdims=True)),)

    return record(probs, (logits,), backward)


def cross_entropy_loss(logits, labels):
    """Mean over pixels of -log softmax at the true class.

    :param logits: B x C x H x W
    :type logits: Tensor
    :param labels: B x H x W integer class ids
    :type labels: numpy.ndarray
    :rtype: Tensor
    """
    _check_4d(logits, 'logits')
    labels = np.asarray(labels)
    batch, classes, height, width = logits.shape
    if labels.shape != (batch, height, width):
        raise DimensionError(f'Labels of shape {labels.shape} do not match logits {logits.shape}')
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise LabelError(f'Labels must lie in 0..{classes - 1}, found {labels.min()}..{labels.max()}')
    log_probs = _log_softmax(logits.data)
    index = labels[:, None].astype(np.intp)
    count = labels.size
    loss = -np.take_along_axis(log_probs, index, axis=1).sum() / count

    def backward(grad):
        grad_logits = np.exp(log_probs)
        np.put_along_axis(grad_logits, index, np.take_along_axis(grad_logits, index, axis=1) - 1, axis=1)
        return (grad * grad_logits / count,)

    return record(loss, (logits,), backward)


def mad_loss(pred, target):
    """Mean absolute difference between a prediction and a regression target.

    :param pred: Prediction
    :type pred: Tensor
    :param target: Target of the same shape
    :type target: Tensor or numpy.ndarray
    :rtype: Tensor
    """
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise DimensionError(f'Prediction {pred.shape} and target {target.shape} differ in shape')
    diff = pred.data - target.data
    count = diff.size
    sign = np.sign(diff)
    return record(np.abs(diff).mean(), (pred, target),
                  lambda g: (g * sign / count, -g * sign / count))
