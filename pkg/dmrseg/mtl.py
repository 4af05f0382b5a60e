"""Joint objective of the segmentation task and the distance-map regression task.

The learned weighting treats the regression residual as Laplacian with scale
sigma1 = exp(s1) and the segmentation as a softmax with temperature
sigma2 = exp(s2):

    loss = exp(-s1) * L_mad + exp(-2 * s2) * L_ce + s1 + s2
"""
import abc
import logging

import numpy as np

from .autograd import Tensor
from .errors import ConfigError


LOGGER = logging.getLogger(__name__)


class TaskWeights():

    """Learnable log-scales of the two tasks, both starting at 0 (unit sigma)

    :param s1: Initial log-scale of the regression noise
    :type s1: float
    :param s2: Initial log-scale of the segmentation temperature
    :type s2: float
    """

    def __init__(self, s1=0.0, s2=0.0, dtype=np.float64):
        self.s1 = Tensor(np.array(s1, dtype=dtype), requires_grad=True)
        self.s2 = Tensor(np.array(s2, dtype=dtype), requires_grad=True)

    @property
    def sigma1(self):
        return float(np.exp(self.s1.item()))

    @property
    def sigma2(self):
        return float(np.exp(self.s2.item()))

    def parameters(self):
        return [self.s1, self.s2]

    def effective_weights(self):
        """(weight on the MAD term, weight on the cross-entropy term)
        """
        return float(np.exp(-self.s1.item())), float(np.exp(-2.0 * self.s2.item()))


def joint_loss(mad, ce, weights):
    """Uncertainty-weighted sum of the two task losses, differentiable in s1 and s2 too

    :param mad: Mean absolute difference of the distance maps
    :type mad: Tensor
    :param ce: Cross-entropy of the segmentation
    :type ce: Tensor
    :type weights: TaskWeights
    :rtype: Tensor
    """
    s1, s2 = weights.s1, weights.s2
    return (-s1).exp() * mad + (s2 * -2.0).exp() * ce + s1 + s2


def fixed_loss(mad, ce, w1, w2):
    """w1 * L_mad + w2 * L_ce
    """
    if w1 < 0 or w2 < 0:
        raise ValueError(f'Loss weights must be non-negative, got {w1} and {w2}')
    return mad * w1 + ce * w2


class LossWeighting(abc.ABC):

    name = None

    @abc.abstractmethod
    def combine(self, mad, ce):
        """Join the two task losses into the training objective

        :rtype: Tensor
        """
        return

    @abc.abstractmethod
    def effective_weights(self):
        """(weight on the MAD term, weight on the cross-entropy term)
        """
        return

    def parameters(self):
        return []

    def log_values(self):
        """Columns this weighting contributes to the per-epoch log
        """
        w_mad, w_ce = self.effective_weights()
        return {'s1': float('nan'), 's2': float('nan'), 'w_mad': w_mad, 'w_ce': w_ce}


class LearnedWeighting(LossWeighting):

    name = 'learned'

    def __init__(self, dtype=np.float64):
        self.weights = TaskWeights(dtype=dtype)

    def combine(self, mad, ce):
        return joint_loss(mad, ce, self.weights)

    def effective_weights(self):
        return self.weights.effective_weights()

    def parameters(self):
        return self.weights.parameters()

    def log_values(self):
        values = super().log_values()
        values.update(s1=self.weights.s1.item(), s2=self.weights.s2.item())
        return values


class FixedWeighting(LossWeighting):

    name = 'fixed'

    def __init__(self, w1=1.0, w2=1.0):
        if w1 < 0 or w2 < 0:
            raise ValueError(f'Loss weights must be non-negative, got {w1} and {w2}')
        self.w1 = float(w1)
        self.w2 = float(w2)

    def combine(self, mad, ce):
        return fixed_loss(mad, ce, self.w1, self.w2)

    def effective_weights(self):
        return self.w1, self.w2


EqualWeights = FixedWeighting(1.0, 1.0)
"""Both tasks weighted 1.0 throughout training"""


def make_weighting(name, w1=1.0, w2=1.0, dtype=np.float64):
    """Weighting strategy by name: ``learned`` gets fresh task weights, ``fixed`` uses w1, w2
    """
    if name == 'learned':
        return LearnedWeighting(dtype=dtype)
    if name == 'fixed':
        if w1 == 1.0 and w2 == 1.0:
            return EqualWeights
        return FixedWeighting(w1, w2)
    raise ConfigError(f'Unknown weighting {name}; expected learned or fixed')
