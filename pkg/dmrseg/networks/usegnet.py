from .model import ArchSpec


USEGNET = ArchSpec(variant='usegnet')
"""U-SegNet: a SegNet decoder that also concatenates the encoder activations of each stage"""

DMR_USEGNET = ArchSpec(variant='usegnet', dmr_attached=True)
"""U-SegNet with the distance-map regularizer attached at the bottleneck"""
