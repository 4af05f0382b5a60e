from .model import ArchSpec


SEGNET = ArchSpec(variant='segnet')
"""SegNet: the decoder up-samples with the encoder's pooling indices and has no skip connections"""

DMR_SEGNET = ArchSpec(variant='segnet', dmr_attached=True)
"""SegNet with the distance-map regularizer attached at the bottleneck"""
