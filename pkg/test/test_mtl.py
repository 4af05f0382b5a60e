import math
import unittest

import numpy as np

from dmrseg.autograd import Tensor, backward, zero_grad
from dmrseg.errors import ConfigError
from dmrseg.mtl import *


class TestJointLoss(unittest.TestCase):

    def test_initial_value(self):
        weights = TaskWeights()
        loss = joint_loss(Tensor(np.array(2.0)), Tensor(np.array(3.0)), weights)
        self.assertAlmostEqual(loss.item(), 5.0)
        self.assertEqual(weights.effective_weights(), (1.0, 1.0))
        self.assertEqual((weights.sigma1, weights.sigma2), (1.0, 1.0))

    def test_gradient_descent_finds_task_scales(self):
        weights = TaskWeights()
        mad, ce = Tensor(np.array(2.0)), Tensor(np.array(3.0))
        for step in range(5000):
            zero_grad(weights.parameters())
            backward(joint_loss(mad, ce, weights))
            for s in weights.parameters():
                s.data = s.data - 0.05 * s.grad
        self.assertAlmostEqual(weights.sigma1, 2.0, delta=1e-4)
        self.assertAlmostEqual(weights.sigma2 ** 2, 6.0, delta=1e-3)
        w_mad, w_ce = weights.effective_weights()
        self.assertAlmostEqual(w_mad * 2.0, 1.0, delta=1e-4)
        self.assertAlmostEqual(w_ce * 3.0, 0.5, delta=1e-4)

    def test_loss_gradients_scale_with_weights(self):
        weights = TaskWeights(s1=math.log(2.0), s2=0.5 * math.log(6.0))
        mad = Tensor(np.array(2.0), requires_grad=True)
        ce = Tensor(np.array(3.0), requires_grad=True)
        backward(joint_loss(mad, ce, weights))
        self.assertAlmostEqual(mad.grad.item(), 0.5)
        self.assertAlmostEqual(ce.grad.item(), 1 / 6)
        self.assertAlmostEqual(weights.s1.grad.item(), 0.0, places=12)
        self.assertAlmostEqual(weights.s2.grad.item(), 0.0, places=12)

    def test_fixed_loss(self):
        loss = fixed_loss(Tensor(np.array(2.0)), Tensor(np.array(3.0)), 0.5, 2.0)
        self.assertAlmostEqual(loss.item(), 7.0)
        with self.assertRaises(ValueError):
            fixed_loss(Tensor(np.array(2.0)), Tensor(np.array(3.0)), -1.0, 1.0)


class TestWeighting(unittest.TestCase):

    def test_make_weighting(self):
        learned = make_weighting('learned', dtype=np.float32)
        self.assertIsInstance(learned, LearnedWeighting)
        self.assertEqual(len(learned.parameters()), 2)
        self.assertEqual(learned.parameters()[0].dtype, np.float32)
        self.assertIs(make_weighting('fixed'), EqualWeights)
        fixed = make_weighting('fixed', 0.25, 4.0)
        self.assertEqual(fixed.effective_weights(), (0.25, 4.0))
        self.assertEqual(fixed.parameters(), [])
        with self.assertRaises(ConfigError):
            make_weighting('uncertainty')

    def test_log_values(self):
        learned = LearnedWeighting()
        learned.weights.s1.data = np.array(1.0)
        values = learned.log_values()
        self.assertEqual(values['s1'], 1.0)
        self.assertAlmostEqual(values['w_mad'], math.exp(-1.0))
        self.assertEqual(values['w_ce'], 1.0)
        fixed = FixedWeighting(2.0, 3.0).log_values()
        self.assertTrue(math.isnan(fixed['s1']))
        self.assertEqual((fixed['w_mad'], fixed['w_ce']), (2.0, 3.0))

    def test_combine(self):
        mad, ce = Tensor(np.array(1.5)), Tensor(np.array(0.5))
        self.assertAlmostEqual(EqualWeights.combine(mad, ce).item(), 2.0)
        self.assertAlmostEqual(LearnedWeighting().combine(mad, ce).item(), 2.0)


if __name__ == '__main__':
    unittest.main()
