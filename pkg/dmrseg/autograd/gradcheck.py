"""Central finite-difference gradient checks."""
import logging

import numpy as np

from .tensor import backward, no_grad, zero_grad


LOGGER = logging.getLogger(__name__)


def numerical_gradient(f, tensor, index, eps=1e-6):
    """Central difference of the scalar ``f()`` with respect to one entry of ``tensor``

    :param f: Zero-argument callable returning a scalar Tensor
    :type f: callable
    :param tensor: Tensor whose entry is perturbed in place
    :type tensor: Tensor
    :param index: Index of the entry
    :type index: tuple
    :param eps: Half step, defaults to 1e-6
    :type eps: float, optional
    :rtype: float
    """
    original = tensor.data[index].copy()
    try:
        with no_grad():
            tensor.data[index] = original + eps
            plus = float(f().data)
            tensor.data[index] = original - eps
            minus = float(f().data)
    finally:
        tensor.data[index] = original
    return (plus - minus) / (2 * eps)


def relative_error(analytic, numeric, floor=1e-6):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(f, tensors, tolerance, samples=None, eps=1e-6, retries=2, floor=1e-6, seed=0):
    """Compare backward gradients of ``f()`` against central differences.

    A sampled entry whose error exceeds ``tolerance`` is re-checked with a ten
    times smaller step, up to ``retries`` times, so a step that straddles a kink
    (ReLU at zero, a max-pooling tie, an absolute value at zero) is not counted
    as a mismatch.

    :param samples: Entries checked per tensor; all entries when None
    :type samples: int, optional
    :return: Worst relative error over all checked entries
    :rtype: float
    """
    zero_grad(tensors)
    backward(f())
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for tensor, grad in zip(tensors, analytic):
        if samples is None or tensor.size <= samples:
            flat = range(tensor.size)
        else:
            flat = rng.choice(tensor.size, size=samples, replace=False)
        for position in flat:
            index = np.unravel_index(position, tensor.shape)
            step = eps
            for _ in range(retries + 1):
                error = relative_error(float(grad[index]), numerical_gradient(f, tensor, index, step), floor)
                if error < tolerance:
                    break
                step /= 10
            if error >= tolerance:
                LOGGER.debug('gradient mismatch at %s: relative error %g', index, error)
            worst = max(worst, error)
    return worst
