import math
import os
import tempfile
import unittest
from dataclasses import replace
from unittest import mock

import numpy as np

from dmrseg.autograd import Tensor, get_tape, backward as real_backward, zero_grad as real_zero_grad
from dmrseg.dataio import PhantomSpec, Case, gen_phantom
from dmrseg.distmap import dm_stack
from dmrseg.errors import ConfigError, UsageError, NonFiniteLossError
from dmrseg.networks import ArchSpec, count_parameters, build_model, forward, load_checkpoint, predict_logits
from dmrseg.trainer import *


SMALL_PHANTOM = PhantomSpec(size=32, slices=4, empty_fraction=0.0, disk_radius=(3.0, 4.0),
                            ring_thickness=(2.0, 2.5), crescent_radius=(3.0, 4.0), center_jitter=1.0)


def phantom_cases(count, spec=SMALL_PHANTOM, first=0):
    cases = []
    for index in range(first, first + count):
        image, labels = gen_phantom(spec, index)
        cases.append(Case(f'case{index:03d}', image, labels))
    return cases


def small_config(dmr=False, **kwargs):
    arch = ArchSpec(variant='unet', stage_channels=(4, 8, 16), bottleneck_channels=32, dmr_attached=dmr)
    values = dict(arch=arch, epochs=1, batch_size=4, dm_threshold=20.0, dtype='float64')
    values.update(kwargs)
    return TrainConfig(**values)


def same_arrays(a, b):
    return all(np.array_equal(x, y) for (_, x), (_, y) in zip(a.named_arrays(), b.named_arrays()))


class TestRMSProp(unittest.TestCase):

    def test_first_step(self):
        p, g, v = np.zeros(1), np.ones(1), np.zeros(1)
        rmsprop_step([p], [g], [v], 0.1)
        self.assertAlmostEqual(v[0], 0.01, places=12)
        self.assertAlmostEqual(p[0], -0.1 / (0.1 + 1e-8), places=9)
        self.assertAlmostEqual(p[0], -0.9999999, places=7)

    def test_zero_gradient(self):
        p, v = np.array([1.5, -2.0]), np.array([0.5, 0.25])
        rmsprop_step([p], [np.zeros(2)], [v], 0.1)
        np.testing.assert_array_equal(p, [1.5, -2.0])
        np.testing.assert_allclose(v, [0.495, 0.2475])
        rmsprop_step([p], [None], [v], 0.1)
        np.testing.assert_array_equal(p, [1.5, -2.0])
        with self.assertRaises(ValueError):
            rmsprop_step([p], [np.zeros(3)], [v], 0.1)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        start = rng.standard_normal((3, 4))
        grads = [rng.standard_normal((3, 4)) for _ in range(5)]
        results = []
        for _ in range(2):
            tensor = Tensor(start.copy(), requires_grad=True)
            optimizer = RMSProp([tensor])
            for grad in grads:
                tensor.grad = grad
                optimizer.step(0.01)
            results.append(tensor.data)
        np.testing.assert_array_equal(results[0], results[1])


class TestSchedule(unittest.TestCase):

    def test_lr_at(self):
        cfg = TrainConfig(lr0=0.0005)
        self.assertEqual(lr_at(0, cfg), 0.0005)
        self.assertAlmostEqual(lr_at(1, cfg), 0.000495, places=15)
        self.assertEqual(lr_at(100, replace(cfg, lr_decay=1.0)), 0.0005)
        with self.assertRaises(ValueError):
            lr_at(-1, cfg)

    def test_defaults(self):
        self.assertEqual((BASELINE_LR, MULTITASK_LR), (0.0001, 0.0005))
        cfg = TrainConfig()
        self.assertEqual((cfg.lr_decay, cfg.batch_size), (0.99, 15))
        self.assertEqual(cfg.lr0, BASELINE_LR)
        self.assertEqual(TrainConfig(arch=ArchSpec(dmr_attached=True)).lr0, MULTITASK_LR)
        self.assertEqual(small_config(dmr=True, lr0=0.002).lr0, 0.002)
        self.assertEqual(default_lr(ArchSpec(dmr_attached=False)), BASELINE_LR)

    def test_validation(self):
        for bad in (dict(lr0=0.0), dict(lr_decay=1.5), dict(batch_size=0), dict(weighting='ranked'),
                    dict(dtype='float16')):
            with self.assertRaises(ConfigError):
                TrainConfig(**bad).validate()

    def test_threshold_reaches_architecture(self):
        self.assertEqual(TrainConfig(dm_threshold=50.0).arch.dm_threshold, 50.0)

    def test_config_hash(self):
        self.assertEqual(small_config().config_hash(), small_config().config_hash())
        self.assertNotEqual(small_config().config_hash(), small_config(seed=1).config_hash())


class TestTrainingData(unittest.TestCase):

    def test_expand(self):
        cases = phantom_cases(2)
        slices = expand_training_slices(cases, copies=2, seed=3)
        self.assertEqual(len(slices), 2 * 4 * 3)
        self.assertEqual(slices[0].key, ('case000', 0, 0))
        np.testing.assert_array_equal(slices[0].image, cases[0].image.slice(0))
        again = expand_training_slices(cases, copies=2, seed=3)
        for a, b in zip(slices, again):
            self.assertEqual(a.key, b.key)
            np.testing.assert_array_equal(a.image, b.image)
            np.testing.assert_array_equal(a.labels, b.labels)

    def test_target_cache(self):
        configure_cache_size(16)
        slices = expand_training_slices(phantom_cases(1), copies=1)
        cache = TargetCache(slices, num_classes=4)
        keys = [s.key for s in slices[:3]]
        batch = cache.batch(keys, 20.0)
        self.assertEqual(batch.shape, (3, 3, 32, 32))
        np.testing.assert_array_equal(batch[1], dm_stack(slices[1].labels, 4, 20.0).channels)
        cache.batch(keys, 20.0)
        self.assertGreaterEqual(cache.get.cache_info().hits, 3)
        self.assertEqual(cache.get.cache_info().maxsize, 16)
        configure_cache_size()
        self.assertEqual(cache.get.cache_info().maxsize, 16)
        fresh = TargetCache(slices, num_classes=4)
        self.assertEqual(fresh.get.cache_info().maxsize, 1000)
        self.assertEqual(fresh.get.cache_info().currsize, 0)

    def test_targets_come_from_labels(self):
        slices = expand_training_slices(phantom_cases(1))
        cache = TargetCache(slices, num_classes=4)
        before = cache.batch([slices[0].key], 20.0)
        slices[0].image[:] = 0.0
        np.testing.assert_array_equal(cache.batch([slices[0].key], 20.0), before)


class TestTrain(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.train_cases = phantom_cases(1)
        cls.val_cases = phantom_cases(1, first=10)

    def test_empty_dataset(self):
        with self.assertRaises(UsageError):
            train(small_config(), [], self.val_cases)

    def test_deterministic(self):
        a = train(small_config(dmr=True), self.train_cases, self.val_cases)
        b = train(small_config(dmr=True), self.train_cases, self.val_cases)
        self.assertTrue(a.log.equals(b.log))
        self.assertTrue(same_arrays(a.checkpoint.params, b.checkpoint.params))
        self.assertTrue(same_arrays(a.params, b.params))

    def test_log_columns(self):
        result = train(small_config(dmr=True, epochs=5, batch_size=2), self.train_cases, self.val_cases)
        log = result.log
        for column in ('epoch', 'lr', 'train_loss', 'train_ce', 'train_mad', 'val_ce', 'val_mad',
                       'val_dice_mean', 'val_dice_c1', 'val_dice_c2', 'val_dice_c3', 's1', 's2', 'w_mad', 'w_ce'):
            self.assertIn(column, log.columns)
        self.assertEqual(len(log), 5)
        self.assertGreater(log['train_ce'][0], 0)
        self.assertGreater(log['train_mad'][0], 0)
        self.assertGreater(abs(log['w_mad'].iloc[-1] - 1.0), 1e-3)
        self.assertAlmostEqual(log['lr'][1], 0.000495, places=15)

    def test_baseline_log(self):
        result = train(small_config(epochs=2), self.train_cases, self.val_cases)
        self.assertTrue(result.log['train_mad'].isna().all())
        self.assertTrue(result.log['s1'].isna().all())
        self.assertFalse(result.checkpoint.params.dmr_attached)

    def test_checkpoint_is_best_epoch(self):
        result = train(small_config(epochs=4, batch_size=2, lr0=0.003), self.train_cases, self.val_cases)
        log = result.log
        best = int(log['val_dice_mean'].to_numpy().argmax())
        self.assertEqual(result.checkpoint.epoch, best)
        self.assertEqual(result.checkpoint.val_dice, log['val_dice_mean'][best])

    def test_no_validation_keeps_last_epoch(self):
        result = train(small_config(epochs=2), self.train_cases)
        self.assertEqual(result.checkpoint.epoch, 1)
        self.assertTrue(math.isnan(result.checkpoint.val_dice))

    def test_files(self):
        with tempfile.TemporaryDirectory() as directory:
            log_path = os.path.join(directory, 'log.csv')
            checkpoint_path = os.path.join(directory, 'best.npz')
            result = train(small_config(dmr=True, epochs=2), self.train_cases, self.val_cases,
                           log_path=log_path, checkpoint_path=checkpoint_path)
            self.assertTrue(os.path.exists(log_path))
            params, meta = load_checkpoint(checkpoint_path, dtype=np.float64)
            self.assertEqual(meta['epoch'], result.checkpoint.epoch)
            self.assertEqual(meta['config_hash'], small_config(dmr=True, epochs=2).config_hash())
            self.assertIn('s1', meta['task_weights'])

    def test_non_finite_gradient(self):
        learnables = []

        def record_learnables(tensors):
            learnables.append(tensors)
            real_zero_grad(tensors)

        def corrupt_gradient(loss):
            real_backward(loss)
            weight = learnables[-1][0]
            weight.grad = np.full_like(weight.data, np.nan)

        with mock.patch('dmrseg.trainer.zero_grad', side_effect=record_learnables), \
                mock.patch('dmrseg.trainer.backward', side_effect=corrupt_gradient), \
                mock.patch.object(RMSProp, 'step') as step:
            with self.assertRaises(NonFiniteLossError) as raised:
                train(small_config(), self.train_cases)
        self.assertEqual((raised.exception.epoch, raised.exception.step), (0, 0))
        self.assertTrue(np.isfinite(raised.exception.loss))
        step.assert_not_called()

    def test_stale_graph_cleared_before_step(self):
        params = build_model(small_config().arch, seed=0)
        forward(params, np.zeros((1, 1, 32, 32)), 'train')
        self.assertGreater(len(get_tape()), 0)
        tape_lengths = []

        def record_tape(*args, **kwargs):
            tape_lengths.append(len(get_tape()))
            return forward(*args, **kwargs)

        with mock.patch('dmrseg.trainer.forward', side_effect=record_tape):
            train(small_config(), self.train_cases)
        self.assertTrue(tape_lengths)
        self.assertEqual(set(tape_lengths), {0})

    def test_non_finite_loss(self):
        image, labels = gen_phantom(SMALL_PHANTOM, 0)
        image.voxels[0, 0, 0] = np.nan
        with self.assertRaises(NonFiniteLossError) as raised:
            train(small_config(), [Case('broken', image, labels)])
        self.assertEqual((raised.exception.epoch, raised.exception.step), (0, 0))
        self.assertEqual(len(get_tape()), 0)


class TestValidateAndFinalize(unittest.TestCase):

    def test_validate_leaves_parameters(self):
        params = build_model(small_config(dmr=True).arch, seed=1)
        forward(params, np.random.default_rng(0).standard_normal((2, 1, 32, 32)), 'train')
        before = params.copy()
        result = validate(params, phantom_cases(1))
        self.assertTrue(same_arrays(params, before))
        self.assertEqual(len(result.dice_per_class), 3)
        self.assertGreaterEqual(result.dice_mean, 0.0)
        self.assertGreater(result.mad, 0.0)
        with self.assertRaises(UsageError):
            validate(params, [])

    def test_finalize(self):
        cfg = small_config(dmr=True)
        result = train(cfg, phantom_cases(1), phantom_cases(1, first=5))
        volume = phantom_cases(1, first=7)[0].image.voxels
        with tempfile.TemporaryDirectory() as directory:
            raw_path = os.path.join(directory, 'raw.npz')
            final_path = os.path.join(directory, 'final.npz')
            result.checkpoint.save(raw_path)
            final = finalize(result.checkpoint, final_path)
            self.assertLess(os.path.getsize(final_path), os.path.getsize(raw_path))
        self.assertFalse(final.dmr_attached)
        baseline = build_model(replace(cfg.arch, dmr_attached=False))
        self.assertEqual(count_parameters(final), count_parameters(baseline))
        np.testing.assert_array_equal(predict_logits(final, volume), predict_logits(result.checkpoint.params, volume))

    def test_finalize_baseline(self):
        result = train(small_config(), phantom_cases(1))
        with tempfile.TemporaryDirectory() as directory:
            paths = [os.path.join(directory, name) for name in ('raw.npz', 'final.npz')]
            result.checkpoint.save(paths[0])
            self.assertIs(finalize(result.checkpoint, paths[1]), result.checkpoint.params)
            with open(paths[0], 'rb') as a, open(paths[1], 'rb') as b:
                self.assertEqual(a.read(), b.read())


if __name__ == '__main__':
    unittest.main()
