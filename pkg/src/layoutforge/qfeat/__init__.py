"""Feature discretization: VQ codebook (3D) and CIE Lab binning (2D)."""

from .lab import LabBinning, lab_dequantize, lab_quantize, lab_to_srgb, srgb_to_lab
from .vq import Codebook, VqConfig, VqEncoderDecoder, VqModel, train_vq, vq_losses, vq_nearest

__all__ = [
    "Codebook",
    "LabBinning",
    "VqConfig",
    "VqEncoderDecoder",
    "VqModel",
    "lab_dequantize",
    "lab_quantize",
    "lab_to_srgb",
    "srgb_to_lab",
    "train_vq",
    "vq_losses",
    "vq_nearest",
]
