"""Decoder wirings: how a decoder consumes the encoder's bottleneck, pooling
indices and skip activations.
"""
import abc

from ..autograd import max_unpool2x2, upsample_nearest2x, concat_channels


class DecoderWiring(abc.ABC):

    uses_indices = False
    uses_skips = False

    @abc.abstractmethod
    def build(self, group, spec, out_channels, rng):
        """Add this decoder's parameters to ``group``

        :param group: Empty parameter group to populate
        :type group: ParamGroup
        :param spec: Architecture whose encoder the decoder mirrors
        :type spec: ArchSpec
        :param out_channels: Channels of the 1x1 output head
        :type out_channels: int
        :param rng: Random stream for the Kaiming initializer
        :type rng: numpy.random.Generator
        """
        return

    @abc.abstractmethod
    def decode(self, group, encoded, mode):
        """Map an encoder output to a full-resolution output tensor

        :type group: ParamGroup
        :type encoded: EncoderOutput
        :param mode: ``train`` or ``eval``
        :rtype: Tensor
        """
        return


def _stage_widths(spec):
    # output width of each level's last conv; the top level keeps c1
    channels = spec.stage_channels
    return (channels[0],) + tuple(channels[:-1])


class UnpoolingWiring(DecoderWiring):
    """SegNet-style decoding: an entry conv maps the bottleneck to the deepest
    stage width, then every level unpools with the encoder's indices, optionally
    concatenates the matching skip, and applies two conv units.
    """

    uses_indices = True

    def __init__(self, skips):
        self.uses_skips = skips

    def build(self, group, spec, out_channels, rng):
        channels = spec.stage_channels
        widths = _stage_widths(spec)
        group.add_conv_unit('entry', spec.bottleneck_channels, channels[-1], rng, spec.use_batchnorm)
        for level in reversed(range(len(channels))):
            in_channels = channels[level] * (2 if self.uses_skips else 1)
            group.add_conv_unit(f'level{level + 1}.conv1', in_channels, channels[level], rng,
                                spec.use_batchnorm)
            group.add_conv_unit(f'level{level + 1}.conv2', channels[level], widths[level], rng,
                                spec.use_batchnorm)
        group.add_head('head', channels[0], out_channels, rng)

    def decode(self, group, encoded, mode):
        x = group.conv_unit('entry', encoded.bottleneck, mode)
        for level in reversed(range(len(encoded.indices))):
            x = max_unpool2x2(x, encoded.indices[level])
            if self.uses_skips:
                x = concat_channels(x, encoded.skips[level])
            x = group.conv_unit(f'level{level + 1}.conv1', x, mode)
            x = group.conv_unit(f'level{level + 1}.conv2', x, mode)
        return group.head('head', x)


class UpsamplingWiring(DecoderWiring):
    """U-Net decoding: every level up-samples (a learned stride-2 deconvolution,
    or nearest-neighbour replication followed by a conv unit), concatenates the
    matching skip and applies two conv units.
    """

    uses_skips = True

    def build(self, group, spec, out_channels, rng):
        channels = spec.stage_channels
        previous = spec.bottleneck_channels
        for level in reversed(range(len(channels))):
            name = f'level{level + 1}'
            if spec.upsampling == 'deconv':
                group.add_up(f'{name}.up', previous, channels[level], rng)
            else:
                group.add_conv_unit(f'{name}.up', previous, channels[level], rng, spec.use_batchnorm)
            group.add_conv_unit(f'{name}.conv1', 2 * channels[level], channels[level], rng,
                                spec.use_batchnorm)
            group.add_conv_unit(f'{name}.conv2', channels[level], channels[level], rng,
                                spec.use_batchnorm)
            previous = channels[level]
        group.add_head('head', channels[0], out_channels, rng)

    def decode(self, group, encoded, mode):
        x = encoded.bottleneck
        for level in reversed(range(len(encoded.skips))):
            name = f'level{level + 1}'
            # 2x2 kernels are deconvolutions, 3x3 ones follow nearest up-sampling
            if group.params[f'{name}.up.weight'].shape[2] == 2:
                x = group.up(f'{name}.up', x)
            else:
                x = group.conv_unit(f'{name}.up', upsample_nearest2x(x), mode)
            x = concat_channels(x, encoded.skips[level])
            x = group.conv_unit(f'{name}.conv1', x, mode)
            x = group.conv_unit(f'{name}.conv2', x, mode)
        return group.head('head', x)


SegNet = UnpoolingWiring(skips=False)
"""Pooling indices, no skip connections"""

USegNet = UnpoolingWiring(skips=True)
"""Pooling indices and skip connections"""

UNet = UpsamplingWiring()
"""Skip connections with learned up-sampling, no pooling indices"""

Regularizer = SegNet
"""The distance-map decoder: fed from the bottleneck and the pooling indices only"""

WIRINGS = {'segnet': SegNet, 'usegnet': USegNet, 'unet': UNet}
