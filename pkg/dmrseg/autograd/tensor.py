import logging
import threading
from contextlib import contextmanager

import numpy as np

from ..errors import UsageError


LOGGER = logging.getLogger(__name__)

_LOCAL = threading.local()


class Node():
    """One recorded operation: the tensors it read, the tensor it produced, and
    a rule mapping the output gradient to one gradient (or None) per input
    """

    __slots__ = ('inputs', 'output', 'backward')

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape():
    """Ordered record of differentiable operations for one execution context.

    Nodes are appended as operations run, so every node follows the nodes that
    produced its inputs; replaying the list in reverse is a reverse topological
    traversal.
    """

    def __init__(self):
        self.nodes = []
        self.enabled = True

    def record(self, inputs, output, backward):
        self.nodes.append(Node(inputs, output, backward))
        output._tape = self

    def clear(self):
        for node in self.nodes:
            node.output._tape = None
        self.nodes = []

    def __len__(self):
        return len(self.nodes)


def get_tape():
    """The tape of the calling thread; each thread records on its own tape
    """
    tape = getattr(_LOCAL, 'tape', None)
    if tape is None:
        tape = Tape()
        _LOCAL.tape = tape
    return tape


@contextmanager
def no_grad():
    """Run operations without recording them, e.g. for eval-mode inference
    """
    tape = get_tape()
    previous = tape.enabled
    tape.enabled = False
    try:
        yield tape
    finally:
        tape.enabled = previous


class Tensor():

    """An n-dimensional array of reals that can take part in reverse-mode
    differentiation.

    :param data: Values; converted to a NumPy array
    :type data: array_like
    :param requires_grad: Whether backward should populate ``grad``, defaults to False
    :type requires_grad: bool, optional
    :param dtype: Floating dtype, defaults to the dtype of a floating input array or float64
    :type dtype: numpy.dtype, optional
    """

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = np.float64
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    def _accumulate(self, grad):
        grad = _unbroadcast(np.asarray(grad, dtype=self.dtype), self.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def __repr__(self):
        return f'Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})'

    def _wrap(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        other = self._wrap(other)
        return record(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __neg__(self):
        return record(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = self._wrap(other)
        return record(self.data - other.data, (self, other), lambda g: (g, -g))

    def __rsub__(self, other):
        return self._wrap(other) - self

    def __mul__(self, other):
        other = self._wrap(other)
        a, b = self.data, other.data
        return record(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def exp(self):
        out = np.exp(self.data)
        return record(out, (self,), lambda g: (g * out,))

    def sum(self):
        shape = self.shape
        return record(self.data.sum(), (self,), lambda g: (np.broadcast_to(g, shape),))

    def mean(self):
        shape, n = self.shape, self.size
        return record(self.data.mean(), (self,), lambda g: (np.broadcast_to(g / n, shape),))


def _unbroadcast(grad, shape):
    """Sum out broadcast dimensions so that ``grad`` takes the operand's shape
    """
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def record(data, inputs, backward):
    """Wrap ``data`` as the output of an operation over ``inputs`` and record
    the operation on the current tape when any input requires a gradient.

    :param data: Result of the forward computation
    :type data: numpy.ndarray
    :param inputs: Operand tensors
    :type inputs: tuple
    :param backward: Maps the output gradient to a tuple of per-input gradients
    :type backward: callable

    :rtype: Tensor
    """
    tape = get_tape()
    requires_grad = tape.enabled and any(t.requires_grad for t in inputs)
    dtype = inputs[0].dtype if inputs else None
    out = Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)
    if requires_grad:
        tape.record(inputs, out, backward)
    return out


def backward(loss):
    """Populate ``grad`` on every tensor that contributed to ``loss``.

    Gradients accumulate additively into existing ``grad`` values; the tape is
    cleared afterwards.

    :param loss: A scalar tensor produced by recorded operations
    :type loss: Tensor
    """
    if loss.size != 1:
        raise UsageError(f'backward requires a scalar loss, got shape {loss.shape}')
    tape = get_tape()
    if loss._tape is not tape:
        raise UsageError('The loss was not recorded on the current tape')
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        grad = node.output.grad
        if grad is None:
            continue
        for tensor, input_grad in zip(node.inputs, node.backward(grad)):
            if input_grad is not None and tensor.requires_grad:
                tensor._accumulate(input_grad)
    LOGGER.debug('backward replayed %d nodes', len(tape))
    tape.clear()


def zero_grad(tensors):
    for tensor in tensors:
        tensor.grad = None
