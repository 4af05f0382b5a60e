from .model import (ArchSpec, ModelParams, EncoderOutput, ForwardOutput, build_model, count_parameters,
                    encode, decode_segmentation, decode_distance_maps, forward, detach_regularizer,
                    attach_regularizer, predict_logits, predict_labels, predict_distance_maps,
                    save_checkpoint, load_checkpoint, FORMAT_VERSION)
from .blocks import ParamGroup, kaiming_bound
from .wiring import DecoderWiring, SegNet, USegNet, UNet, Regularizer, WIRINGS
from .segnet import SEGNET, DMR_SEGNET
from .usegnet import USEGNET, DMR_USEGNET
from .unet import UNET, DMR_UNET, UNET_NEAREST
