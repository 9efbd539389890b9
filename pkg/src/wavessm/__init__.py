"""Wavelet-domain state-space network for low-light image enhancement.

The package combines a lossless Haar wavelet pyramid with selective
state-space sequence modeling on the low-frequency path and
match-and-correct attention on the high-frequency path, plus the
supporting cast: a small reverse-mode autodiff engine, image metrics,
checkpointing, and a batch CLI.
"""

from .network import Model, ModelConfig, build, forward, load, param_count, save

__version__ = "0.1.0"

__all__ = [
    "Model",
    "ModelConfig",
    "build",
    "forward",
    "load",
    "param_count",
    "save",
    "__version__",
]
