import os
import tempfile
import unittest
from dataclasses import replace

import numpy as np

from dmrseg.autograd import Tensor, backward, zero_grad, cross_entropy_loss, mad_loss, no_grad
from dmrseg.dataio import Volume, LabelVolume
from dmrseg.errors import DimensionError, UsageError
from dmrseg.networks import *
from dmrseg.errors import ConfigError


def tiny(variant='unet', **kwargs):
    return ArchSpec(variant=variant, stage_channels=(4, 8, 16), bottleneck_channels=32, **kwargs)


def arrays(params):
    return dict(params.named_arrays())


def eval_logits(params, image):
    with no_grad():
        return forward(params, image, 'eval').logits.data


class TestArchSpec(unittest.TestCase):

    def test_presets(self):
        self.assertEqual(UNET.stage_channels, (32, 64, 128))
        self.assertEqual(UNET.bottleneck_channels, 256)
        self.assertTrue(DMR_SEGNET.dmr_attached)
        self.assertIs(DMR_USEGNET.wiring, USegNet)
        self.assertIs(SEGNET.wiring, SegNet)
        self.assertEqual(UNET_NEAREST.upsampling, 'nearest')

    def test_validation(self):
        with self.assertRaises(ConfigError):
            ArchSpec(variant='resnet').validate()
        with self.assertRaises(ConfigError):
            ArchSpec(stage_channels=(32, 32, 64)).validate()
        with self.assertRaises(ConfigError):
            ArchSpec(stage_channels=(16, 32)).validate()

    def test_json(self):
        spec = tiny('usegnet', dmr_attached=True, dm_threshold=10.0)
        self.assertEqual(ArchSpec.from_json(spec.to_json()), spec)


class TestBuild(unittest.TestCase):

    def test_deterministic(self):
        a, b = build_model(tiny(), seed=5), build_model(tiny(), seed=5)
        for (name, x), (_, y) in zip(a.named_arrays(), b.named_arrays()):
            np.testing.assert_array_equal(x, y, err_msg=name)
        c = build_model(tiny(), seed=6)
        self.assertFalse(np.array_equal(a.groups['encoder'].params['stage1.conv1.weight'].data,
                                        c.groups['encoder'].params['stage1.conv1.weight'].data))

    def test_initialization(self):
        params = build_model(tiny('usegnet', dmr_attached=True))
        for group in params.groups.values():
            for name, tensor in group.params.items():
                if name.endswith('.weight'):
                    shape = tensor.shape
                    bound = kaiming_bound(shape[1] * shape[2] * shape[3])
                    self.assertLess(np.abs(tensor.data).max(), bound)
                elif name.endswith('.gamma'):
                    np.testing.assert_array_equal(tensor.data, 1.0)
                else:
                    np.testing.assert_array_equal(tensor.data, 0.0)

    def test_counts(self):
        for variant in ('segnet', 'usegnet', 'unet'):
            baseline = build_model(tiny(variant))
            attached = build_model(tiny(variant, dmr_attached=True))
            self.assertGreater(count_parameters(attached), count_parameters(baseline))
            self.assertEqual(count_parameters(detach_regularizer(attached)), count_parameters(baseline))
            self.assertEqual(count_parameters(attached, 'dmr_decoder'),
                             count_parameters(attached) - count_parameters(baseline))

    def test_attached_shares_baseline_weights(self):
        baseline = arrays(build_model(tiny(), seed=2))
        attached = arrays(build_model(tiny(dmr_attached=True), seed=2))
        for name, values in baseline.items():
            np.testing.assert_array_equal(attached[name], values)

    def test_batchnorm_off(self):
        params = build_model(tiny(use_batchnorm=False))
        names = set(params.groups['encoder'].params)
        self.assertIn('stage1.conv1.bias', names)
        self.assertNotIn('stage1.conv1.gamma', names)
        self.assertFalse(params.groups['encoder'].stats)


class TestForward(unittest.TestCase):

    def setUp(self):
        self.image = Tensor(np.random.default_rng(0).standard_normal((2, 1, 32, 32)))

    def test_shapes(self):
        for variant in ('segnet', 'usegnet', 'unet'):
            for spec in (tiny(variant), tiny(variant, dmr_attached=True)):
                out = forward(build_model(spec), self.image, 'train')
                self.assertEqual(out.logits.shape, (2, 4, 32, 32))
                if spec.dmr_attached:
                    self.assertEqual(out.dm_pred.shape, (2, 3, 32, 32))
                else:
                    self.assertIsNone(out.dm_pred)

    def test_full_width_shapes(self):
        params = build_model(DMR_UNET, dtype=np.float32)
        out = forward(params, self.image.data.astype(np.float32), 'eval')
        self.assertEqual(out.logits.shape, (2, 4, 32, 32))
        self.assertEqual(out.dm_pred.shape, (2, 3, 32, 32))
        self.assertEqual(out.logits.dtype, np.float32)

    def test_nearest_upsampling(self):
        params = build_model(tiny(upsampling='nearest'))
        self.assertEqual(forward(params, self.image, 'train').logits.shape, (2, 4, 32, 32))
        self.assertEqual(params.groups['seg_decoder'].params['level1.up.weight'].shape[2], 3)

    def test_extents(self):
        params = build_model(tiny())
        for size in (16, 24, 48):
            image = np.zeros((1, 1, size, size))
            self.assertEqual(eval_logits(params, image).shape, (1, 4, size, size))
        with self.assertRaises(DimensionError):
            forward(params, np.zeros((1, 1, 20, 20)))
        with self.assertRaises(DimensionError):
            forward(params, np.zeros((1, 2, 16, 16)))

    def test_eval_deterministic(self):
        params = build_model(tiny('usegnet', dmr_attached=True))
        forward(params, self.image, 'train')
        np.testing.assert_array_equal(eval_logits(params, self.image), eval_logits(params, self.image))

    def test_skip_wiring(self):
        for variant, uses_skips in (('segnet', False), ('usegnet', True), ('unet', True)):
            params = build_model(tiny(variant))
            with no_grad():
                encoded = encode(params, self.image, 'eval')
                plain = decode_segmentation(params, encoded, 'eval').data
                zeroed = EncoderOutput([Tensor(np.zeros(s.shape)) for s in encoded.skips], encoded.indices,
                                       encoded.bottleneck)
                changed = decode_segmentation(params, zeroed, 'eval').data
            self.assertEqual(not np.array_equal(plain, changed), uses_skips, variant)

    def test_usegnet_skips_every_stage(self):
        params = build_model(tiny('usegnet'))
        with no_grad():
            encoded = encode(params, self.image, 'eval')
            plain = decode_segmentation(params, encoded, 'eval').data
            for level in range(len(encoded.skips)):
                skips = list(encoded.skips)
                skips[level] = Tensor(np.zeros(skips[level].shape))
                zeroed = EncoderOutput(skips, encoded.indices, encoded.bottleneck)
                changed = decode_segmentation(params, zeroed, 'eval').data
                self.assertFalse(np.array_equal(plain, changed), level)
        self.assertEqual(len(encoded.skips), 3)

    def test_gradient_flow(self):
        params = build_model(tiny('unet', dmr_attached=True))
        labels = np.random.default_rng(1).integers(0, 4, size=(2, 32, 32))
        targets = np.random.default_rng(2).standard_normal((2, 3, 32, 32))
        for term in ('ce', 'mad'):
            zero_grad(params.parameters())
            out = forward(params, self.image, 'train')
            loss = cross_entropy_loss(out.logits, labels) if term == 'ce' else mad_loss(out.dm_pred, targets)
            backward(loss)
            for tensor in params.parameters('encoder'):
                self.assertTrue(np.any(tensor.grad != 0))
            silent = 'dmr_decoder' if term == 'ce' else 'seg_decoder'
            for tensor in params.parameters(silent):
                self.assertTrue(tensor.grad is None or not tensor.grad.any())


class TestRegularizerLifecycle(unittest.TestCase):

    def test_detach_keeps_segmentation(self):
        params = build_model(tiny('segnet', dmr_attached=True), seed=1)
        image = np.random.default_rng(3).standard_normal((3, 1, 16, 16))
        forward(params, image, 'train')
        before = eval_logits(params, image)
        detached = detach_regularizer(params)
        np.testing.assert_array_equal(eval_logits(detached, image), before)
        self.assertNotIn('dmr_decoder', detached.groups)
        self.assertIs(detached.groups['encoder'], params.groups['encoder'])
        with self.assertRaises(UsageError):
            detach_regularizer(detached)

    def test_reattach(self):
        params = detach_regularizer(build_model(tiny(dmr_attached=True)))
        attached = attach_regularizer(params, seed=9)
        out = forward(attached, np.zeros((1, 1, 16, 16)), 'train')
        self.assertEqual(out.dm_pred.shape, (1, 3, 16, 16))
        with self.assertRaises(UsageError):
            attach_regularizer(attached)
        with self.assertRaises(UsageError):
            decode_distance_maps(params, encode(params, np.zeros((1, 1, 16, 16))))


class TestPrediction(unittest.TestCase):

    def test_predict_labels(self):
        params = build_model(tiny())
        voxels = np.random.default_rng(4).standard_normal((16, 16, 5))
        labels = predict_labels(params, Volume(voxels, (1.5, 1.5, 8.0)))
        self.assertIsInstance(labels, LabelVolume)
        self.assertEqual(labels.shape, (16, 16, 5))
        self.assertEqual(labels.spacing, (1.5, 1.5, 8.0))
        logits = predict_logits(params, voxels, batch_size=2)
        self.assertEqual(logits.shape, (5, 4, 16, 16))
        np.testing.assert_array_equal(labels.labels, logits.argmax(axis=1).transpose(1, 2, 0))
        np.testing.assert_array_equal(predict_labels(params, voxels), labels.labels)

    def test_predict_distance_maps(self):
        params = build_model(tiny(dmr_attached=True))
        maps = predict_distance_maps(params, np.zeros((16, 16, 3)))
        self.assertEqual(maps.shape, (3, 16, 16, 3))
        with self.assertRaises(UsageError):
            predict_distance_maps(detach_regularizer(params), np.zeros((16, 16, 3)))


class TestCheckpoint(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.directory.cleanup()

    def path(self, name):
        return os.path.join(self.directory.name, name)

    def test_round_trip(self):
        params = build_model(tiny('usegnet', dmr_attached=True), seed=4, dtype=np.float32)
        image = np.random.default_rng(5).standard_normal((2, 1, 16, 16)).astype(np.float32)
        forward(params, image, 'train')
        save_checkpoint(params, self.path('a.npz'), {'epoch': 3})
        loaded, meta = load_checkpoint(self.path('a.npz'))
        self.assertEqual(meta, {'epoch': 3})
        self.assertEqual(loaded.spec, params.spec)
        np.testing.assert_array_equal(eval_logits(loaded, image), eval_logits(params, image))
        for (name, x), (_, y) in zip(params.named_arrays(), loaded.named_arrays()):
            np.testing.assert_array_equal(x, y, err_msg=name)

    def test_deterministic_bytes(self):
        params = build_model(tiny(dmr_attached=True), seed=4)
        save_checkpoint(params, self.path('a.npz'), {'epoch': 1})
        save_checkpoint(params.copy(), self.path('b.npz'), {'epoch': 1})
        with open(self.path('a.npz'), 'rb') as a, open(self.path('b.npz'), 'rb') as b:
            self.assertEqual(a.read(), b.read())
        save_checkpoint(detach_regularizer(params), self.path('c.npz'))
        self.assertLess(os.path.getsize(self.path('c.npz')), os.path.getsize(self.path('a.npz')))

    def test_mismatched_archive(self):
        params = build_model(tiny(dmr_attached=True))
        save_checkpoint(params, self.path('a.npz'))
        spec = replace(params.spec, dmr_attached=False)
        np.savez(self.path('b.npz'), __format_version__=np.array(1), __archspec__=np.array(spec.to_json()),
                 __meta__=np.array('{}'), **{'encoder.stage1.conv1.weight': np.zeros((4, 1, 3, 3))})
        with self.assertRaises(ValueError):
            load_checkpoint(self.path('b.npz'))


if __name__ == '__main__':
    unittest.main()
