"""Overfitted latent-pyramid image codec with a mixed autoregressive
entropy model: per-image training on the encoder side, a lightweight
deterministic decoder, and rate/time-distortion reporting tools."""

__version__ = "0.1.0"

from .decoder import DecodeReport, decode
from .encoder import LAMBDA_PRESETS, EncodeConfig, EncodeReport, encode, greedy_best_of
from .metrics import bd_rate, bd_time, psnr

__all__ = [
    "__version__",
    "DecodeReport", "decode",
    "EncodeConfig", "EncodeReport", "encode", "greedy_best_of", "LAMBDA_PRESETS",
    "bd_rate", "bd_time", "psnr",
]
