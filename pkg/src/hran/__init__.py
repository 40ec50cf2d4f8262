"""HRAN: hierarchical residual attention network for single-image super-resolution.

Everything runs on numpy: a small reverse-mode autodiff tape, the network
and its ablation variants, BI/BD degradation, Y-channel PSNR/SSIM, an Adam
trainer with bit-exact checkpoints, and a command line front end.
"""

from .config import DegradationSpec, ModelConfig, RunConfig, TrainConfig
from .estimator import Degrader, HRANSuperResolver
from .model import HRAN, build_variant, count_params

__version__ = "0.1.0"

__all__ = [
    "DegradationSpec",
    "Degrader",
    "HRAN",
    "HRANSuperResolver",
    "ModelConfig",
    "RunConfig",
    "TrainConfig",
    "build_variant",
    "count_params",
]
