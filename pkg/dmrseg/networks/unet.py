from .model import ArchSpec


UNET = ArchSpec(variant='unet')
"""U-Net: learned stride-2 deconvolutions and skip connections, no pooling indices"""

DMR_UNET = ArchSpec(variant='unet', dmr_attached=True)
"""U-Net with the distance-map regularizer attached at the bottleneck"""

UNET_NEAREST = ArchSpec(variant='unet', upsampling='nearest')
"""U-Net whose decoder replicates pixels (nearest neighbour) instead of learning the up-sampling"""
